"""Exception types shared by the zrp modules."""


class ZRPError(Exception):
    """Base class for all errors raised by zrp."""


class UsageError(ZRPError, ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigurationError(ZRPError, ValueError):
    """Model or experiment parameters are invalid."""


class PreconditionError(ZRPError, ValueError):
    """A documented precondition on the inputs does not hold."""


class RangeError(ZRPError, ValueError):
    """A requested value lies outside the range a table can certify."""


class ResourceError(ZRPError, RuntimeError):
    """An exact computation would exceed its size cap."""


class ConvergenceError(ZRPError, RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
