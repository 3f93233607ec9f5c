"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (2),
data problems (3) and numerical failures (4).
"""

from __future__ import annotations


class DrDidError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(DrDidError):
    exit_code = 2


class DataError(DrDidError):
    exit_code = 3


class NumericalError(DrDidError):
    exit_code = 4


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"missing column {column!r}")
        self.column = column


class NonFiniteValue(DataError):
    def __init__(self, row: int, col: str, value: object = None):
        msg = f"non-finite or unparseable value at row {row}, column {col!r}"
        if value is not None:
            msg += f": {value!r}"
        super().__init__(msg)
        self.row = row
        self.col = col


class DegenerateTreatment(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class DegenerateZ(DataError):
    pass


class BasisTooLarge(DataError):
    pass


class InsufficientStratum(DataError):
    pass


class LearnerFailure(NumericalError):
    def __init__(self, fold: int, which: str, cause: Exception | None = None):
        super().__init__(f"{which} learner failed on fold {fold}: {cause}")
        self.fold = fold
        self.which = which


class Infeasible(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class SingularSigmaF(NumericalError):
    pass


class ZeroXi(ConfigError):
    pass


class AllRepsFailed(NumericalError):
    pass
