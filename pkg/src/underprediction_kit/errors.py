"""Exception hierarchy shared by every module, with CLI exit codes."""

from __future__ import annotations

from collections.abc import Iterable


class UnderpredictionKitError(Exception):
    """Base class for errors the CLI reports without a traceback."""

    exit_code = 1
    kind = "internal"


# ── Usage ──────────────────────────────────────────────────────────


class UsageError(UnderpredictionKitError, ValueError):
    exit_code = 2
    kind = "usage"


# ── Data ───────────────────────────────────────────────────────────


class DataError(UnderpredictionKitError, ValueError):
    exit_code = 3
    kind = "data"


class SchemaError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class DegenerateGroupError(DataError):
    pass


class FoldError(DataError):
    pass


class UnknownCategoryError(DataError):
    """Raised when a column holds values its binning rule does not cover."""

    def __init__(self, column: str, values: Iterable[object]) -> None:
        self.column = column
        self.values = sorted({str(v) for v in values})
        shown = ", ".join(repr(v) for v in self.values[:20])
        more = f" (+{len(self.values) - 20} more)" if len(self.values) > 20 else ""
        super().__init__(f"column {column!r}: values not covered by schema: {shown}{more}")


# ── Numerical ──────────────────────────────────────────────────────


class NumericalError(UnderpredictionKitError, ArithmeticError):
    exit_code = 4
    kind = "numerical"


class UndefinedProportionError(NumericalError):
    pass


class UndefinedMetricError(NumericalError):
    pass


class SingularRatioError(NumericalError):
    pass


class DegenerateFitError(NumericalError):
    pass
