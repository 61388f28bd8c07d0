"""Multispectral differential morphing attack detection toolkit."""

from msdmad.protocol import SpectralBand, SessionId, Label

__version__ = "0.1.0"

__all__ = ["SpectralBand", "SessionId", "Label", "__version__"]
