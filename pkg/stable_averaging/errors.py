from __future__ import annotations

from dataclasses import dataclass


class AssumptionError(ValueError):
    """A structural assumption of the slow-fast model is violated (alpha range, dissipativity, p < alpha)."""


class FitError(ValueError):
    pass


class ExperimentFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ConfigIssue:
    field: str
    message: str


class ConfigError(ValueError):
    def __init__(self, issues: list[ConfigIssue]) -> None:
        self.issues = list(issues)
        joined = "; ".join(f"{issue.field}: {issue.message}" for issue in self.issues)
        super().__init__(f"Invalid configuration ({joined})")
