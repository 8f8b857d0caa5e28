"""Exception types shared across the package."""


class UCLError(Exception):
    """Base class for all package errors."""


class ConfigurationError(UCLError, ValueError):
    """Invalid hyper-parameters or configuration keys."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class InputError(UCLError, ValueError):
    """Malformed input data (empty sequences, mismatched lengths)."""


class UsageError(UCLError, RuntimeError):
    """An API was called in a state where it cannot work."""


class NumericalError(UCLError, FloatingPointError):
    """A non-finite value appeared during training."""

    def __init__(self, message, epoch=None, batch=None, term=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.term = term
