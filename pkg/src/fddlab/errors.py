"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class FddLabError(Exception):
    exit_code = 1


class ConfigError(FddLabError, ValueError):
    exit_code = 2


class DataError(FddLabError):
    exit_code = 3


class FormatError(DataError):
    """Bad magic or unknown version in a binary file."""


class CorruptionError(DataError):
    """Truncated or inconsistent binary payload."""


class DegenerateSampleError(DataError, ValueError):
    """All-zero matrix, zero column, or coincident points where a scale is needed."""


class DivergenceError(FddLabError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch

    def __str__(self):
        msg = super().__str__()
        if self.epoch is not None:
            msg += f" (epoch {self.epoch}, batch {self.batch})"
        return msg


class SingularMatrixError(FddLabError, ArithmeticError):
    pass


class OptimizationError(FddLabError):
    pass
