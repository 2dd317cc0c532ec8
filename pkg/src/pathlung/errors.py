"""Exception hierarchy.

Everything deriving from :class:`InputError` is a problem with the caller's
data or parameters (CLI exit code 1). I/O failures are raised as
:class:`VolumeIOError`, an ``OSError``, and map to the same exit code.
"""


class InputError(ValueError):
    """Bad input data or parameters."""


class ParameterError(InputError):
    pass


class FormatError(InputError):
    """Malformed file contents, e.g. a NIfTI header field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class SeedSelectionError(InputError):
    def __init__(self, side, message=None):
        super().__init__(message or f"no seed candidates in the {side} half of the threshold mask")
        self.side = side


class SearchSpaceError(InputError):
    pass


class TrainingError(InputError):
    pass


class StageError(Exception):
    """Wraps a failure inside a pipeline stage, keeping the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class VolumeIOError(OSError):
    pass
