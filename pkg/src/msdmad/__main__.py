import sys

from msdmad.cli import main

sys.exit(main())
