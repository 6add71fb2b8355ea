"""
Error hierarchy.

Every error carries the exit code the CLI returns for it.
"""


class SelShareError(Exception):
    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigurationError(SelShareError):
    """Bad shapes, bad config values, unfactorable reshapes."""
    exit_code = 3


class InputError(SelShareError):
    """Targets that do not fit the task they are given to."""
    exit_code = 4


class NumericError(SelShareError):
    """NaN/Inf values or a failed decomposition."""
    exit_code = 5


class UsageError(SelShareError):
    """Operations called out of order."""
    exit_code = 6


class StructuralError(SelShareError):
    """Inconsistent TT core chain."""
    exit_code = 7


class IngestionError(SelShareError):
    """Unreadable or malformed data file."""
    exit_code = 8

    def __init__(self, path, detail: str):
        super().__init__(f"{path}: {detail}")
        self.path = str(path)


class PlanError(SelShareError):
    """Merge plan inconsistent with the current topology."""
    exit_code = 9


class TraceVersionError(SelShareError):
    """Unknown trace or checkpoint schema version."""
    exit_code = 10


class InternalError(SelShareError):
    exit_code = 70


__all__ = [
    "SelShareError",
    "ConfigurationError",
    "InputError",
    "NumericError",
    "UsageError",
    "StructuralError",
    "IngestionError",
    "PlanError",
    "TraceVersionError",
    "InternalError",
]
