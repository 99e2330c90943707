class GroundCXRError(Exception):
    """Base class for every error raised by this package."""


class DomainError(GroundCXRError, ValueError):
    """An argument lies outside the domain of the operation."""


class ShapeError(GroundCXRError, ValueError):
    pass


class DataError(GroundCXRError, ValueError):
    """Input data is malformed or inconsistent (duplicate ids, unknown labels, bad JSONL)."""


class UnsupportedFormatError(GroundCXRError):
    pass


class CorruptFileError(GroundCXRError):
    pass
