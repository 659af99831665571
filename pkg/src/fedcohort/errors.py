"""Exception hierarchy.

``ConfigError`` maps to CLI exit code 2, ``DataError`` and its subclasses to 3.
"""


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


class FormatError(DataError):
    pass


class LengthMismatchError(FormatError):
    pass


class InvalidLabelError(DataError):
    pass


class CapacityError(DataError):
    pass


class ShapeError(DataError):
    pass


class DivergenceError(ArithmeticError):
    def __init__(self, message: str, batch_index: int | None = None, round_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index
        self.round_index = round_index
