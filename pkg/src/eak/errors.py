"""Exception hierarchy.

Three top-level families map onto the CLI exit codes: ConfigError -> 2,
DataError -> 3, NumericalError -> 4.
"""


class EakError(Exception):
    pass


class ConfigError(EakError):
    pass


class DataError(EakError):
    pass


class NumericalError(EakError):
    pass


# --- volume / parcellation ---

class UnsupportedDatatype(DataError):
    pass


class CorruptHeader(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NonIntegerLabels(DataError):
    pass


class UnknownLabel(DataError):
    pass


class EmptyRegion(DataError):
    pass


class OutOfBounds(DataError):
    pass


# --- block splitting ---

class WindowOutOfRange(ConfigError):
    pass


class TrIncompatible(ConfigError):
    pass


# --- SVM engine ---

class SingleClassInput(DataError):
    pass


class NonLinearKernel(ConfigError):
    pass


class TooFewSamples(DataError):
    pass


class TooFewFolds(ConfigError):
    pass


# --- atlas ---

class DegenerateSeries(NumericalError):
    pass


class OverlapError(DataError):
    pass


class DigestMismatch(DataError):
    pass


class SchemaError(DataError):
    pass


# --- stats ---

class BandOutOfRange(ConfigError):
    pass


class BandEmpty(ConfigError):
    pass


class GroupTooSmall(DataError):
    pass


# --- classifier ---

class EmptyConfusion(DataError):
    pass


class InsufficientUnits(DataError):
    pass


class TooShortForAlff(DataError):
    pass
