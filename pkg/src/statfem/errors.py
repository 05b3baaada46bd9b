"""Exception hierarchy shared by all modules."""


class StatFemError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgumentError(StatFemError, ValueError):
    pass


class MeshParseError(StatFemError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PointNotFoundError(StatFemError, LookupError):
    pass


class PlacementError(StatFemError, ValueError):
    pass


class UnsupportedSmoothnessError(StatFemError, ValueError):
    pass


class NumericalError(StatFemError, ArithmeticError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, message, step=None, sample=None):
        self.step = step
        self.sample = sample
        super().__init__(message)


class SingularInnovationError(NumericalError):
    pass


class AlignmentError(StatFemError, ValueError):
    pass


class NoFeasiblePointError(StatFemError, RuntimeError):
    pass


class ConfigError(StatFemError, ValueError):
    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class OracleLimitError(StatFemError, ValueError):
    """Raised when a reference computation is asked to exceed its size limits."""
