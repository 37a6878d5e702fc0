"""Exception types shared across the library."""

from __future__ import annotations


class HierPiError(Exception):
    """Base class for all library errors."""


class RankDeficientError(HierPiError):
    """A matrix that must have full row rank is numerically singular.

    Carries the offending smallest singular value so callers can decide
    on a fallback (the scenario harness treats this as task deactivation
    for the current control step).
    """

    def __init__(self, sigma_min: float, context: str = ""):
        self.sigma_min = float(sigma_min)
        self.context = context
        msg = f"rank deficient (sigma_min={self.sigma_min:.3e})"
        if context:
            msg += f": {context}"
        super().__init__(msg)


class DimensionMismatchError(HierPiError):
    """Operands have incompatible shapes."""


class InactiveTaskError(HierPiError):
    """A task controller was evaluated while its activation predicate is false."""


class NonFiniteError(HierPiError):
    """A numerical result contains NaN or Inf."""


class DegenerateWeightsError(HierPiError):
    """Importance weights collapsed onto a single sample (temperature too small)."""


class ScenarioParseError(HierPiError):
    """Scenario file could not be parsed; carries position information."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class ScenarioValidationError(HierPiError):
    """Scenario contents violate the schema or an invariant; names the field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class BatchFailedError(HierPiError):
    """More than the tolerated fraction of batch runs raised errors."""

    def __init__(self, failures: list[tuple[int, str]], n_runs: int):
        self.failures = failures
        self.n_runs = n_runs
        super().__init__(
            f"{len(failures)} of {n_runs} runs failed: "
            + "; ".join(f"run {i}: {m}" for i, m in failures[:5])
        )
