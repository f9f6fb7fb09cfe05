"""Exception types shared across the package.

DataError and its subclasses cover malformed or inconsistent input
artifacts (CLI exit code 2); NumericalError covers non-finite training
state (CLI exit code 3).
"""


class DataError(Exception):
    """A file or dataset is malformed, truncated, or internally inconsistent."""


class BadMagicError(DataError):
    """A binary file does not start with the expected magic bytes."""


class BadVersionError(DataError):
    """A binary file declares an unsupported format version."""


class TruncatedFileError(DataError):
    """A file ends before its declared payload is complete."""


class PayloadSizeError(DataError):
    """A header declares an impossible or unreasonably large payload."""


class UnknownLabelError(DataError):
    """A label file names a class missing from the mapping."""


class CheckpointError(DataError):
    """A checkpoint file cannot be decoded into a model."""


class NumericalError(Exception):
    """Training produced a non-finite loss or gradient."""
