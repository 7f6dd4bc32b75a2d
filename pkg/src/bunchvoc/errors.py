"""Exception hierarchy shared by every bunchvoc module."""


class BunchvocError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(BunchvocError, ValueError):
    pass


class DegenerateAutocorrelation(BunchvocError, ValueError):
    pass


class InvalidEpsilon(BunchvocError, ValueError):
    pass


class TargetOutOfRange(BunchvocError, ValueError):
    pass


class MalformedDistribution(BunchvocError, ValueError):
    pass


class BadLength(BunchvocError, ValueError):
    pass


class ShapeMismatch(BunchvocError, ValueError):
    pass


class RateMismatch(BunchvocError, ValueError):
    pass


class EmptyHistogram(BunchvocError, ValueError):
    pass


class AlignmentError(BunchvocError, ValueError):
    pass


class MissingForwardTape(BunchvocError, RuntimeError):
    pass


class ModelFormatError(BunchvocError):
    """Base for model-file decoding failures."""


class BadMagic(ModelFormatError):
    pass


class UnsupportedVersion(ModelFormatError):
    pass


class CorruptDirectory(ModelFormatError):
    pass


class TruncatedPayload(ModelFormatError):
    pass
