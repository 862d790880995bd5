"""Shared exception types. CLI maps DomainError to exit code 1."""


class DomainError(Exception):
    """Base for all expected domain failures."""


class NiftiError(DomainError):
    """Malformed or unsupported NIfTI content; `field` names the offender."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{message} (field: {field})")
        self.field = field


class GridMismatchError(DomainError):
    """Two volumes that must share a grid do not."""


class MissingPhaseError(DomainError):
    """A study lacks a required phase or mask."""


class PipelineStepError(DomainError):
    """Preprocessing step failure, annotated with the step name."""

    def __init__(self, step: str, cause: Exception):
        super().__init__(f"step '{step}' failed: {cause}")
        self.step = step
        self.cause = cause
