"""Exception hierarchy shared by every module."""


class LudorError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(LudorError, ValueError):
    pass


class InternalError(LudorError, RuntimeError):
    pass


class EnvError(LudorError, RuntimeError):
    pass


class DatasetError(LudorError, ValueError):
    pass


class TrainingError(LudorError, RuntimeError):
    """A numeric failure during optimisation.

    ``step`` is the optimiser step (1-based) at which the failure was
    detected, or None when unknown.
    """

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
