"""Exception hierarchy.

Every error raised by the package derives from :class:`RetrievalError`.
Data problems (bad files, malformed inputs) derive from
:class:`DataFormatError`; broken internal guarantees raise
:class:`InvariantViolation`.  The CLI maps these to exit codes 3 and 4.
"""


class RetrievalError(Exception):
    pass


class DataFormatError(RetrievalError, ValueError):
    pass


class InvariantViolation(RetrievalError, AssertionError):
    pass


class DimensionMismatch(DataFormatError):
    pass


class InvalidGallery(DataFormatError):
    pass


class InvalidKeypoints(DataFormatError):
    pass


class EmptyBox(DataFormatError):
    pass


class RegionMismatch(DataFormatError):
    pass


class LengthMismatch(DataFormatError):
    pass


class InsufficientData(DataFormatError):
    pass


class TooFewMembers(DataFormatError):
    pass


class Unsplittable(DataFormatError):
    pass


class UnknownGroup(DataFormatError, KeyError):
    pass


class NoRelevant(DataFormatError):
    pass


class InvalidSpec(DataFormatError):
    pass


class ChecksumMismatch(DataFormatError):
    pass
