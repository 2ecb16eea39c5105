"""Exception types raised across the package."""


class BinPQError(Exception):
    """Base class for all errors raised by binpq."""


class ShapeError(BinPQError, ValueError):
    pass


class InvalidArchitectureError(BinPQError, ValueError):
    pass


class NumericOverflowError(BinPQError, ArithmeticError):
    pass


class EmptyInputError(BinPQError, ValueError):
    pass


class TrainingDivergedError(BinPQError, ArithmeticError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged (non-finite loss) in epoch {epoch}")


class IndivisibleWidthError(BinPQError, ValueError):
    pass


class InvalidKError(BinPQError, ValueError):
    pass


class CorruptModelError(BinPQError, ValueError):
    pass


class CorruptFileError(BinPQError, ValueError):
    pass


class MalformedIdxError(BinPQError, ValueError):
    pass


class InvalidLabelError(BinPQError, ValueError):
    pass


class ConfigError(BinPQError, ValueError):
    pass
