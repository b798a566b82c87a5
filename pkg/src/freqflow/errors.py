"""Exception hierarchy shared across the package."""


class FreqFlowError(Exception):
    pass


class DimensionError(FreqFlowError, ValueError):
    pass


class ContractError(FreqFlowError, ValueError):
    """A documented precondition was violated by the caller."""


class GraphReuseError(FreqFlowError, RuntimeError):
    pass


class NumericError(FreqFlowError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class DCLeakError(ContractError):
    """Spectrum carries a DC component; instance normalization was skipped."""


class ConfigError(FreqFlowError, ValueError):
    pass


class DataError(FreqFlowError, ValueError):
    pass


class OrderingError(DataError):
    pass


class SchemaError(DataError):
    pass


class UnimputableError(DataError):
    pass


class EmptySplitError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


class CheckpointError(FreqFlowError, IOError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass
