"""Exception types raised by hbart."""


class HBARTError(Exception):
    """Base class for all package errors."""


class DataError(HBARTError, ValueError):
    """Invalid input data."""


class MissingColumnError(DataError):
    def __init__(self, column, path=None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"column {column!r} not found{where}")


class NonNumericError(DataError):
    def __init__(self, column, row, value, path=None):
        self.column = column
        self.row = row
        self.value = value
        where = f"{path}: " if path else ""
        super().__init__(
            f"{where}non-numeric or missing value {value!r} in column {column!r}, row {row}"
        )


class TooFewRowsError(DataError):
    pass


class DegenerateColumnError(DataError):
    """A variance-design column is constant (or collapses to zero) after construction."""


class ConstantResponseError(DataError):
    pass


class NumericalError(HBARTError, FloatingPointError):
    """A sampler quantity overflowed or failed to converge."""


class ModelFileError(HBARTError):
    """A serialized posterior could not be read."""


class CorruptModelError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass
