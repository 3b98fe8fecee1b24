from __future__ import annotations

from dataclasses import dataclass
from math import pi, sqrt

import numpy as np
from scipy import stats

from .errors import FitError


DEFAULT_BLOCKS = 16
MIN_BLOCKS = 8
MIN_FIT_POINTS = 3
SIGNIFICANCE_MULTIPLE = 3.0
# asymptotic sd of a median relative to a mean, sqrt(pi/2)
MEDIAN_OF_MEANS_FACTOR = sqrt(pi / 2.0)


@dataclass(frozen=True)
class RateRow:
    epsilon: float
    error: float
    stderr: float
    n_effective: int
    aborted: int

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ValueError(f"Rate rows need a positive epsilon, got {self.epsilon}.")
        if self.error < 0.0 or not np.isfinite(self.error):
            raise ValueError(f"Rate rows need a finite nonnegative error, got {self.error}.")
        if not np.isfinite(self.stderr) or self.stderr < 0.0:
            raise ValueError(f"Rate rows need a finite nonnegative stderr, got {self.stderr}.")


@dataclass(frozen=True)
class RateTable:
    experiment: str
    rows: tuple[RateRow, ...]

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([row.epsilon for row in self.rows])

    @property
    def errors(self) -> np.ndarray:
        return np.array([row.error for row in self.rows])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([row.stderr for row in self.rows])

    @property
    def total_aborted(self) -> int:
        return sum(row.aborted for row in self.rows)

    def row_for(self, epsilon: float) -> RateRow:
        for row in self.rows:
            if np.isclose(row.epsilon, epsilon, rtol=1e-12, atol=0.0):
                return row
        raise KeyError(f"No row for epsilon = {epsilon}")


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    used: tuple[RateRow, ...]
    excluded: tuple[RateRow, ...]
    root_p: float = 1.0


def _block_means(samples: np.ndarray, blocks: int) -> np.ndarray:
    return np.stack([chunk.mean(axis=0) for chunk in np.array_split(samples, blocks, axis=0)])


def block_statistics(samples, blocks: int = DEFAULT_BLOCKS, robust: bool = True):
    """Block-mean estimate over axis 0 with a jackknife-style stderr; median of block means when robust."""
    values = np.asarray(samples, dtype=np.float64)
    if blocks < MIN_BLOCKS:
        raise ValueError(f"Block estimators need at least {MIN_BLOCKS} blocks, got {blocks}.")
    if values.shape[0] == 0:
        # every sample aborted
        empty = np.full(values.shape[1:], np.nan)
        if empty.ndim == 0:
            return float("nan"), float("nan")
        return empty, empty.copy()
    if values.shape[0] < 4 * blocks:
        raise ValueError(f"Need at least {4 * blocks} samples for {blocks} blocks, got {values.shape[0]}.")
    means = _block_means(values, blocks)
    spread = means.std(axis=0, ddof=1) / sqrt(blocks)
    if robust:
        estimate = np.median(means, axis=0)
        stderr = MEDIAN_OF_MEANS_FACTOR * spread
    else:
        estimate = values.mean(axis=0)
        stderr = spread
    if np.ndim(estimate) == 0:
        return float(estimate), float(stderr)
    return estimate, stderr


def robust_mean(samples, p_moment: float | None = None, blocks: int = DEFAULT_BLOCKS):
    values = np.asarray(samples, dtype=np.float64)
    if p_moment is not None:
        values = np.abs(values) ** float(p_moment)
    return block_statistics(values, blocks=blocks, robust=True)


def fit_loglog(points, root_p: float = 1.0) -> RateFit:
    """OLS of ln(error^{1/root_p}) on ln(epsilon); rows below 3 stderr are excluded and reported."""
    rows = tuple(points)
    used = tuple(row for row in rows if row.error > 0.0 and row.error >= SIGNIFICANCE_MULTIPLE * row.stderr)
    excluded = tuple(row for row in rows if row not in used)
    if len(used) < MIN_FIT_POINTS:
        raise FitError(f"need >= {MIN_FIT_POINTS} points above the noise floor, got {len(used)}")
    log_eps = np.log([row.epsilon for row in used])
    if np.ptp(log_eps) == 0.0:
        raise FitError("Degenerate epsilon spacing: all ladder values are equal.")
    log_err = np.log([row.error for row in used]) / root_p
    fit = stats.linregress(log_eps, log_err)
    slope_stderr = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    return RateFit(
        slope=float(fit.slope),
        intercept=float(fit.intercept),
        slope_stderr=slope_stderr,
        r_squared=float(fit.rvalue**2),
        used=used,
        excluded=excluded,
        root_p=root_p,
    )


def strong_reference_slope(alpha: float) -> float:
    return 1.0 - 1.0 / alpha


def joint_stderr(*stderrs: float) -> float:
    return float(np.sqrt(np.sum(np.square(stderrs))))


def monotonicity_violations(table: RateTable, n_stderr: float = 2.0) -> list[tuple[float, float]]:
    """Adjacent (larger eps, smaller eps) pairs where the error grows beyond n_stderr joint stderrs."""
    ordered = sorted(table.rows, key=lambda row: row.epsilon, reverse=True)
    violations = []
    for coarse, fine in zip(ordered, ordered[1:]):
        if fine.error > coarse.error + n_stderr * joint_stderr(coarse.stderr, fine.stderr):
            violations.append((coarse.epsilon, fine.epsilon))
    return violations
