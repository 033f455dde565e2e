"""Exception types raised across the package."""


class ConflictLensError(Exception):
    """Base class for all package errors."""


class UnknownLevel(ConflictLensError, ValueError):
    def __init__(self, variable, value):
        self.variable = variable
        self.value = value
        super().__init__(f"unknown level {value!r} for variable {variable!r}")


class NonFiniteValue(ConflictLensError, ValueError):
    pass


class NonPositivePET(ConflictLensError, ValueError):
    pass


class InvalidEvent(ConflictLensError, ValueError):
    pass


class EmptyDataset(ConflictLensError, ValueError):
    pass


class DegenerateSplit(ConflictLensError, ValueError):
    pass


class SchemaError(ConflictLensError, ValueError):
    """CSV header or model column layout does not match the event schema."""


class UnlabeledData(ConflictLensError, ValueError):
    pass


class InvalidConfig(ConflictLensError, ValueError):
    pass


class NoRoot(ConflictLensError, ValueError):
    pass


class SingleClass(ConflictLensError, ValueError):
    pass


class TooFewMinority(ConflictLensError, ValueError):
    pass


class DimensionMismatch(ConflictLensError, ValueError):
    pass


class Separation(ConflictLensError, ArithmeticError):
    pass


class SingularInformation(ConflictLensError, ArithmeticError):
    pass


class EmptyNode(ConflictLensError, ValueError):
    pass


class LengthMismatch(ConflictLensError, ValueError):
    pass


class NoPositives(ConflictLensError, ValueError):
    pass


class TooFewPerClass(ConflictLensError, ValueError):
    pass


class BudgetTooSmall(ConflictLensError, ValueError):
    pass


class TooManyFeatures(ConflictLensError, ValueError):
    pass


class EmptyBackground(ConflictLensError, ValueError):
    pass


class MissingCover(ConflictLensError, ValueError):
    pass
