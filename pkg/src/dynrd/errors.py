"""Exception hierarchy.

Errors fall into three families that the command line maps onto exit codes:
configuration problems, data problems and estimation problems.
"""

from __future__ import annotations


class DynRDError(Exception):
    """Base class for every error raised by the package."""

    kind = "error"

    def details(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"error": self.kind, "message": str(self), **self.details()}


class ConfigError(DynRDError):
    kind = "config_error"


class DataError(DynRDError):
    kind = "data_error"


class EstimationError(DynRDError):
    kind = "estimation_error"


class SchemaError(DataError):
    kind = "schema_error"

    def __init__(self, message: str, missing: list[str] | None = None):
        super().__init__(message)
        self.missing = list(missing or [])

    def details(self) -> dict:
        return {"missing_columns": self.missing}


class ConsistencyError(DataError):
    kind = "consistency_error"


class DuplicateError(DataError):
    kind = "duplicate_error"

    def __init__(self, message: str, duplicates: list | None = None):
        super().__init__(message)
        self.duplicates = list(duplicates or [])

    def details(self) -> dict:
        return {"duplicates": [list(map(str, d)) for d in self.duplicates]}


class EmptyCohortError(DataError):
    kind = "empty_cohort_error"


class BalanceError(DataError):
    kind = "balance_error"

    def __init__(self, message: str, units: list | None = None):
        super().__init__(message)
        self.units = list(units or [])

    def details(self) -> dict:
        return {"units": [str(u) for u in self.units]}


class SingularFitError(EstimationError):
    kind = "singular_fit_error"

    def __init__(self, message: str, n_eff: int, condition: float):
        super().__init__(message)
        self.n_eff = int(n_eff)
        self.condition = float(condition)

    def details(self) -> dict:
        return {"n_eff": self.n_eff, "condition": self.condition}


class DegenerateDenominatorError(EstimationError):
    kind = "degenerate_denominator_error"

    def __init__(self, message: str, side: str, value: float):
        super().__init__(message)
        self.side = side
        self.value = float(value)

    def details(self) -> dict:
        return {"side": self.side, "value": self.value}


class DegenerateGroupError(EstimationError):
    kind = "degenerate_group_error"

    def __init__(self, message: str, side: str, group: str, value: float):
        super().__init__(message)
        self.side = side
        self.group = group
        self.value = float(value)

    def details(self) -> dict:
        return {"side": self.side, "group": self.group, "value": self.value}


class InsufficientNeighborsError(EstimationError):
    kind = "insufficient_neighbors_error"


class InsufficientDataError(EstimationError):
    kind = "insufficient_data_error"


class NegativeVarianceError(EstimationError):
    kind = "negative_variance_error"


class NoCohortsError(EstimationError):
    kind = "no_cohorts_error"
