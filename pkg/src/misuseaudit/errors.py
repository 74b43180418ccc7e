"""Exception hierarchy shared across the package.

CLI exit codes map onto these classes: ValidationError -> 1,
DataIOError (and OSError) -> 2, anything else -> 3.
"""


class MisuseAuditError(Exception):
    """Base class for all package errors."""


class ValidationError(MisuseAuditError):
    """Bad input values: out-of-range scores, unknown ids, contract misuse."""


class ContractError(ValidationError):
    """A component was wired against the wrong counterpart (e.g. embedding
    provider mismatch between training and prediction)."""


class DataIOError(MisuseAuditError):
    """Unreadable, unwritable, or structurally broken data files."""


class IngestError(DataIOError):
    """A corpus input file could not be read or parsed at all."""


class CorruptInputError(IngestError):
    """More than half of a file's rows failed to parse."""


class ModelIOError(DataIOError):
    """Model container could not be read or written."""


class IncompatibleModelError(ModelIOError):
    """Model container has a format version this code does not understand."""


class TransportError(MisuseAuditError):
    """External embedding service unreachable after retries."""


class JobConflictError(MisuseAuditError):
    """A job of the same kind is already running."""
