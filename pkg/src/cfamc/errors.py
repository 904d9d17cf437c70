"""Exception hierarchy shared by every cfamc module."""


class CfamcError(Exception):
    """Base class for all package errors."""


class InvalidArgument(CfamcError, ValueError):
    pass


class NotFound(CfamcError, KeyError):
    pass


class PersistenceError(CfamcError, OSError):
    """Raised when reading or writing a file fails; ``path`` names the file."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path

    def __str__(self):
        msg = self.args[0] if self.args else ""
        return f"{msg} [{self.path}]" if self.path is not None else msg


class CorruptDataError(CfamcError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class ContractViolation(CfamcError):
    pass


class IncompatibleSpecError(CfamcError, ValueError):
    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class DivergenceError(CfamcError, ArithmeticError):
    def __init__(self, message, epoch=None, batch=None, phase=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.phase = phase


class PhaseError(CfamcError):
    """Wraps an error raised inside a multi-phase training pipeline."""

    def __init__(self, phase, cause):
        super().__init__(f"phase {phase!r} failed: {cause}")
        self.phase = phase
        self.cause = cause


class PartialResultsError(CfamcError):
    def __init__(self, message, completed):
        super().__init__(message)
        self.completed = list(completed)
