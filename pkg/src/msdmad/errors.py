"""Exception hierarchy shared by all modules.

CLI exit codes are derived from the base class: ``ConfigError`` maps to 1,
``DataError`` to 2 and ``NumericError`` to 3.
"""


class MsdmadError(Exception):
    exit_code = 2


class ConfigError(MsdmadError):
    exit_code = 1


class DataError(MsdmadError):
    exit_code = 2


class NumericError(MsdmadError):
    exit_code = 3


class ParseError(DataError):
    pass


class ValidationError(DataError):
    pass


class VersionMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class CardinalityMismatch(DataError):
    pass


class DegenerateInput(DataError):
    pass


class DegenerateTriangle(NumericError):
    pass


class IndexOutOfRange(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ZeroVector(NumericError):
    pass


class ImageTooSmall(DataError):
    pass


class ModelLoadError(ConfigError):
    pass


class AntipodalVectors(NumericError):
    pass


class WrongArity(DataError):
    pass


class SingleClassInput(DataError):
    pass


class EmptyScores(DataError):
    pass


class EmptyClass(DataError):
    pass
