"""Exception types raised across the toolkit."""


class ProtoscopeError(Exception):
    """Base class for all toolkit errors."""


# dicom ingest
class DicomError(ProtoscopeError, ValueError):
    pass


class MalformedHeader(DicomError):
    pass


class TruncatedElement(DicomError):
    pass


class UnsupportedTransferSyntax(DicomError):
    pass


class MissingCriticalTag(DicomError):
    pass


class PixelLengthMismatch(DicomError):
    pass


class UnsupportedPixelEncoding(DicomError):
    pass


class InvalidRecord(DicomError):
    pass


# quality labels
class EmptyImage(ProtoscopeError, ValueError):
    pass


class DegenerateDistribution(ProtoscopeError, ValueError):
    pass


# dataset
class EmptyAfterFiltering(ProtoscopeError, ValueError):
    pass


class SingleClassInput(ProtoscopeError, ValueError):
    pass


# learners
class SingleClassTraining(ProtoscopeError, ValueError):
    pass


class NonFiniteFeature(ProtoscopeError, ValueError):
    pass


class SchemaMismatch(ProtoscopeError, ValueError):
    pass


# evaluation
class LengthMismatch(ProtoscopeError, ValueError):
    pass


class SingleClass(ProtoscopeError, ValueError):
    pass


class NoPositives(ProtoscopeError, ValueError):
    pass


class TooFewPerClass(ProtoscopeError, ValueError):
    pass


# explanations
class TooManyFeatures(ProtoscopeError, ValueError):
    pass


class UnsupportedKind(ProtoscopeError, ValueError):
    pass


class ShapeMismatch(ProtoscopeError, ValueError):
    pass


class SingularSystemWarning(UserWarning):
    """Kernel regression needed a ridge term to solve."""


# synthetic cohorts
class OutOfRange(ProtoscopeError, ValueError):
    pass


class BadConfig(ProtoscopeError, ValueError):
    pass
