"""Exception hierarchy shared across the package."""


class DistDetectError(Exception):
    """Base class for all package errors."""


class DimensionError(DistDetectError, ValueError):
    pass


class ConvergenceError(DistDetectError):
    """An iterative kernel ran out of iterations.

    ``best`` carries the last estimate so callers can decide whether it is
    good enough.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DivergenceError(DistDetectError):
    """Raised when a recursion that requires a contraction is given none."""


class FactorizationError(DistDetectError, ValueError):
    pass


class StructuralRankError(DistDetectError):
    """The state graph is not structurally full rank, so the SCC-coverage
    observability test does not apply."""


class InstanceTooLargeError(DistDetectError):
    pass


class BoundInapplicableError(DistDetectError):
    """The norm bound needs ||Abar||_2 < 1; use the Lyapunov method instead."""

    def __init__(self, message, b=None):
        super().__init__(message)
        self.b = b


class InfeasibleGainError(DistDetectError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class LemmaCheckError(DistDetectError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class ConfigError(DistDetectError, ValueError):
    pass


class SchemaError(DistDetectError, ValueError):
    pass
