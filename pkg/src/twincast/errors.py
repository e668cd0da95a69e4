"""Exception hierarchy shared across the package.

Every error raised on purpose by this package derives from TwincastError so
callers (and the CLI exit-code mapping) can tell our failures apart from
genuine bugs.
"""


class TwincastError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(TwincastError):
    """Bad inputs: shape mismatches, non-finite data, malformed configs."""


class TrainingError(TwincastError):
    """Training diverged: non-finite loss or gradients.

    Carries the step index at which the failure was detected.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class StorageError(TwincastError):
    """Persistence problems: missing files, corrupt manifests, hash mismatches."""
