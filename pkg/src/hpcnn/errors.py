"""Exception types raised across the package."""


class HpcError(ValueError):
    """Base class for data and contract errors."""


# pcap ingestion
class MalformedHeader(HpcError):
    pass


class TruncatedRecord(HpcError):
    pass


class DegenerateClassWarning(UserWarning):
    """A class had too few packets to stratify; its packets went to train."""


# matrix encoding
class InvalidTarget(HpcError):
    pass


# numeric core
class ShapeMismatch(HpcError):
    pass


class NumericalError(HpcError):
    pass


class CacheMismatch(HpcError):
    pass


# training and model files
class LengthMismatch(HpcError):
    pass


class EmptyDataset(HpcError):
    pass


class InconsistentShapes(HpcError):
    pass


class BadMagic(HpcError):
    pass


class UnsupportedVersion(HpcError):
    pass


class ChecksumMismatch(HpcError):
    pass


class ShapeInconsistent(HpcError):
    pass


# catalog
class DuplicateApplication(HpcError):
    pass


class UnknownServiceReference(HpcError):
    pass


class BadDscp(HpcError):
    pass


# evaluation
class ClassMismatch(HpcError):
    pass


class EmptyTestSet(HpcError):
    pass
