"""Exception hierarchy shared by every module of the toolkit."""


class ForgeError(Exception):
    """Base class for all structured errors raised by condenser_forge."""


class ShapeError(ForgeError, ValueError):
    """An operand has an extent that does not fit the operation."""

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class GradientError(ForgeError):
    """Backward pass misuse (non-scalar loss, unreachable loss, ...)."""


class DivergenceError(ForgeError, FloatingPointError):
    """A NaN or Inf appeared in a loss or gradient."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class DSLError(ForgeError, ValueError):
    """Architecture source could not be parsed; carries a line/column."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f"line {line}" + (f", col {column}" if column is not None else "") + ": "
        super().__init__(loc + message)
        self.line = line
        self.column = column


class WeightsFormatError(ForgeError, ValueError):
    """Weights file is malformed or does not match the target graph."""


class DatasetFormatError(ForgeError, ValueError):
    """A PGM image or dataset manifest is malformed."""

    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path is not None else message)
        self.path = path
