"""Averaged drift, invariant-measure functionals, the Poisson corrector and ergodic decay."""
from __future__ import annotations

import hashlib
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from .dynamics import Problem, StreamNoisePath, iterate_frozen
from .rates import DEFAULT_BLOCKS, SIGNIFICANCE_MULTIPLE, block_statistics, robust_mean
from .spectral import SpectralField
from .stable_noise import SeededStream


logger = logging.getLogger(__name__)

BBAR_ANALYTIC = "analytic"
BBAR_ERGODIC = "ergodic"
BBAR_ENSEMBLE = "ensemble"
BBAR_KINDS = (BBAR_ANALYTIC, BBAR_ERGODIC, BBAR_ENSEMBLE)

STATUS_OK = "ok"
STATUS_NON_CONVERGED = "non_converged"
STATUS_UNDERPOWERED = "underpowered"
STATUS_UNRESOLVABLE = "unresolvable"

BBAR_STREAM = 11
INVARIANT_MEAN_STREAM = 12
INVARIANT_SAMPLE_STREAM = 13
PHI_STREAM = 14
ERGODIC_STREAM = 15

CACHE_QUANTUM = 1e-6
NON_CONVERGENCE_STDERRS = 5.0
PHI_C_MARGIN = 2.0


@dataclass(frozen=True)
class EstimatorParams:
    """Frozen-chain windows; None means 8/(lambda_1 - L_F) burn-in and 100/(lambda_1 - L_F) averaging."""

    burn_in: float | None = None
    window: float | None = None
    h_f: float = 0.01
    n_chains: int = 256
    n_blocks: int = DEFAULT_BLOCKS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.h_f <= 0.0:
            raise ValueError(f"Frozen step h_f must be positive, got {self.h_f}.")
        if self.n_chains < 4 * self.n_blocks:
            raise ValueError(f"n_chains = {self.n_chains} is too small for {self.n_blocks} blocks.")

    def resolved_windows(self, problem: Problem) -> tuple[float, float]:
        gap = problem.dissipativity_gap
        burn_in = 8.0 / gap if self.burn_in is None else float(self.burn_in)
        window = 100.0 / gap if self.window is None else float(self.window)
        if burn_in < 0.0 or window <= 0.0:
            raise ValueError(f"Invalid windows: burn-in {burn_in}, averaging window {window}.")
        return burn_in, window


@dataclass(frozen=True)
class LipschitzFunctional:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    lip: float


def first_coordinate() -> LipschitzFunctional:
    return LipschitzFunctional(name="first_coordinate", value=lambda y: y[..., 0], lip=1.0)


def coordinate(k: int) -> LipschitzFunctional:
    return LipschitzFunctional(name=f"coordinate_{k}", value=lambda y: y[..., k - 1], lip=1.0)


def bounded_first_coordinate() -> LipschitzFunctional:
    return LipschitzFunctional(name="tanh_first_coordinate", value=lambda y: np.tanh(y[..., 0]), lip=1.0)


@dataclass(frozen=True, eq=False)
class BbarEstimate:
    value: SpectralField
    stderr: np.ndarray
    n_samples: int
    aborted: int
    kind: str
    status: str = STATUS_OK


@dataclass(frozen=True)
class _WindowAverages:
    whole: np.ndarray
    early: np.ndarray
    late: np.ndarray
    aborted: int


def quantize(coeffs: np.ndarray, quantum: float = CACHE_QUANTUM) -> tuple[int, ...]:
    return tuple(int(value) for value in np.rint(np.asarray(coeffs, dtype=np.float64) / quantum))


def _state_index(key: tuple[int, ...]) -> int:
    digest = hashlib.blake2b(digest_size=8, person=b"slowfast-state")
    for value in key:
        digest.update(int(value).to_bytes(16, "little", signed=True))
    return int.from_bytes(digest.digest(), "little")


def _frozen_window_averages(
    functional: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x_coeffs: np.ndarray,
    problem: Problem,
    params: EstimatorParams,
    stream: SeededStream,
    ensemble: bool = False,
) -> _WindowAverages:
    burn_in, window = params.resolved_windows(problem)
    n_burn = int(round(burn_in / params.h_f))
    n_window = 0 if ensemble else max(2, int(round(window / params.h_f)))
    half = n_window // 2
    x_batch = np.tile(np.asarray(x_coeffs, dtype=np.float64), (params.n_chains, 1))
    y_start = np.zeros_like(x_batch)
    noise = StreamNoisePath(spec=problem.noise, eigenvalues=problem.eigenvalues, stream=stream)
    early = late = final = None
    aborted = np.zeros(params.n_chains, dtype=bool)
    for step_index, y, aborted in iterate_frozen(problem, x_batch, y_start, n_burn + n_window, params.h_f, noise):
        if ensemble:
            if step_index == n_burn:
                final = functional(x_batch, y)
            continue
        if step_index <= n_burn:
            continue
        values = functional(x_batch, y)
        if step_index - n_burn <= half:
            early = values if early is None else early + values
        else:
            late = values if late is None else late + values
    keep = ~aborted
    if ensemble:
        final = final[keep]
        return _WindowAverages(whole=final, early=final, late=final, aborted=int(aborted.sum()))
    early_mean = early[keep] / half
    late_mean = late[keep] / (n_window - half)
    whole = (early[keep] + late[keep]) / n_window
    return _WindowAverages(whole=whole, early=early_mean, late=late_mean, aborted=int(aborted.sum()))


def _converged(averages: _WindowAverages, blocks: int, robust: bool) -> bool:
    early, early_se = block_statistics(averages.early, blocks=blocks, robust=robust)
    late, late_se = block_statistics(averages.late, blocks=blocks, robust=robust)
    joint = np.sqrt(np.square(early_se) + np.square(late_se))
    return bool(np.all(np.abs(early - late) <= NON_CONVERGENCE_STDERRS * joint + 1e-15))


def estimate_bbar(
    x: SpectralField,
    problem: Problem,
    params: EstimatorParams | None = None,
    kind: str = BBAR_ERGODIC,
) -> BbarEstimate:
    resolved = params or EstimatorParams()
    if kind == BBAR_ANALYTIC:
        if problem.coeffs.analytic_bbar is None:
            raise ValueError(f"Coefficients '{problem.coeffs.name}' carry no analytic averaged drift.")
        value = problem.coeffs.analytic_bbar(np.asarray(x.coeffs))
        return BbarEstimate(
            value=SpectralField(coeffs=value, spectrum=problem.spectrum),
            stderr=np.zeros(problem.m),
            n_samples=0,
            aborted=0,
            kind=kind,
        )
    if kind not in BBAR_KINDS:
        raise ValueError(f"Unknown averaged-drift estimator kind '{kind}'. Known: {BBAR_KINDS}")
    if x.coeffs.ndim != 1:
        raise ValueError("estimate_bbar evaluates one slow state at a time.")

    key = quantize(x.coeffs)
    stream = SeededStream(resolved.seed).child(BBAR_STREAM, _state_index(key))
    averages = _frozen_window_averages(
        problem.coeffs.slow_drift,
        x.coeffs,
        problem,
        resolved,
        stream,
        ensemble=kind == BBAR_ENSEMBLE,
    )
    robust = not problem.coeffs.bounded
    if averages.whole.shape[0] < 4 * resolved.n_blocks:
        logger.warning(
            "averaged drift unresolvable at |x| = %.4g: %d of %d chains aborted",
            x.norm(),
            averages.aborted,
            resolved.n_chains,
        )
        return BbarEstimate(
            value=SpectralField(coeffs=np.full(problem.m, np.nan), spectrum=problem.spectrum),
            stderr=np.full(problem.m, np.nan),
            n_samples=int(averages.whole.shape[0]),
            aborted=averages.aborted,
            kind=kind,
            status=STATUS_UNRESOLVABLE,
        )
    estimate, stderr = block_statistics(averages.whole, blocks=resolved.n_blocks, robust=robust)
    status = STATUS_OK
    if kind == BBAR_ERGODIC and not _converged(averages, resolved.n_blocks, robust):
        status = STATUS_NON_CONVERGED
        logger.warning("averaged drift estimate did not converge at |x| = %.4g", x.norm())
    return BbarEstimate(
        value=SpectralField(coeffs=estimate, spectrum=problem.spectrum),
        stderr=np.asarray(stderr),
        n_samples=int(averages.whole.shape[0]),
        aborted=averages.aborted,
        kind=kind,
        status=status,
    )


@dataclass(eq=False)
class BbarOracle:
    """Averaged drift B-bar on raw coefficient arrays, cached at 1e-6-quantized slow states."""

    problem: Problem
    kind: str = BBAR_ANALYTIC
    params: EstimatorParams = field(default_factory=EstimatorParams)
    quantum: float = CACHE_QUANTUM
    _cache: dict[tuple[int, ...], BbarEstimate] = field(default_factory=dict, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)
    hits: int = field(default=0, init=False)
    misses: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        if self.kind not in BBAR_KINDS:
            raise ValueError(f"Unknown averaged-drift estimator kind '{self.kind}'. Known: {BBAR_KINDS}")
        if self.kind == BBAR_ANALYTIC and self.problem.coeffs.analytic_bbar is None:
            raise ValueError(f"Coefficients '{self.problem.coeffs.name}' carry no analytic averaged drift.")

    @classmethod
    def for_problem(cls, problem: Problem, kind: str | None = None, params: EstimatorParams | None = None) -> BbarOracle:
        resolved_kind = kind or (BBAR_ANALYTIC if problem.coeffs.analytic_bbar is not None else BBAR_ERGODIC)
        return cls(problem=problem, kind=resolved_kind, params=params or EstimatorParams())

    @property
    def cache_size(self) -> int:
        with self._lock:
            return len(self._cache)

    def evaluate(self, x: SpectralField) -> BbarEstimate:
        if self.kind == BBAR_ANALYTIC:
            return estimate_bbar(x, self.problem, self.params, kind=BBAR_ANALYTIC)
        key = quantize(x.coeffs, self.quantum)
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.hits += 1
                return cached
        # identical keys map to identical streams, so concurrent computes agree
        quantized = SpectralField(coeffs=np.asarray(key, dtype=np.float64) * self.quantum, spectrum=self.problem.spectrum)
        estimate = estimate_bbar(quantized, self.problem, self.params, kind=self.kind)
        with self._lock:
            self.misses += 1
            return self._cache.setdefault(key, estimate)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(x, dtype=np.float64)
        if self.kind == BBAR_ANALYTIC:
            return self.problem.coeffs.analytic_bbar(coeffs)
        rows = coeffs.reshape(-1, self.problem.m)
        values = np.empty_like(rows)
        for index, row in enumerate(rows):
            if not np.all(np.isfinite(row)):
                values[index] = np.nan
                continue
            values[index] = self.evaluate(SpectralField(coeffs=row, spectrum=self.problem.spectrum)).value.coeffs
        return values.reshape(coeffs.shape)


def estimate_invariant_mean(
    G: LipschitzFunctional,
    x: SpectralField,
    problem: Problem,
    params: EstimatorParams | None = None,
) -> tuple[float, float]:
    resolved = params or EstimatorParams()
    stream = SeededStream(resolved.seed).child(INVARIANT_MEAN_STREAM, _state_index(quantize(x.coeffs)))
    averages = _frozen_window_averages(lambda _x, y: G.value(y), x.coeffs, problem, resolved, stream)
    if averages.whole.shape[0] < 4 * resolved.n_blocks:
        return float("nan"), float("nan")
    return block_statistics(averages.whole, blocks=resolved.n_blocks, robust=True)


def sample_invariant(
    x: SpectralField,
    problem: Problem,
    n_samples: int,
    params: EstimatorParams | None = None,
) -> np.ndarray:
    """End states of independent frozen runs over burn-in plus averaging window; rows that overflowed are dropped."""
    resolved = params or EstimatorParams()
    burn_in, window = resolved.resolved_windows(problem)
    n_steps = int(round((burn_in + window) / resolved.h_f))
    stream = SeededStream(resolved.seed).child(INVARIANT_SAMPLE_STREAM, _state_index(quantize(x.coeffs)))
    noise = StreamNoisePath(spec=problem.noise, eigenvalues=problem.eigenvalues, stream=stream)
    x_batch = np.tile(np.asarray(x.coeffs, dtype=np.float64), (n_samples, 1))
    y = aborted = None
    for _, y, aborted in iterate_frozen(problem, x_batch, np.zeros_like(x_batch), n_steps, resolved.h_f, noise):
        pass
    return y[~aborted].copy()


@dataclass(frozen=True, eq=False)
class PhiEstimate:
    value: SpectralField
    stderr: np.ndarray
    truncation_bound: float
    t_max: float
    n_samples: int
    status: str = STATUS_OK
    calibrated_c: float = 0.0


def estimate_phi(
    x: SpectralField,
    y: SpectralField,
    problem: Problem,
    oracle: BbarOracle,
    t_max: float | None = None,
    n_samples: int = 2000,
    h_f: float = 0.01,
    seed: int = 0,
    blocks: int = DEFAULT_BLOCKS,
) -> PhiEstimate:
    """Trapezoid estimate of the integral over [0, t_max] of E B(x, Y_t^{x,y}) - B-bar(x).

    A batched y starts one frozen sample per row, which estimates the y-average of the corrector.
    """
    if x.coeffs.ndim != 1:
        raise ValueError("estimate_phi takes a single slow state x.")
    gap = problem.dissipativity_gap
    horizon = 12.0 / gap if t_max is None else float(t_max)
    n_steps = max(1, int(round(horizon / h_f)))
    y_batch = np.asarray(y.coeffs, dtype=np.float64)
    if y_batch.ndim == 1:
        y_batch = np.tile(y_batch, (n_samples, 1))
    x_batch = np.tile(np.asarray(x.coeffs, dtype=np.float64), (y_batch.shape[0], 1))
    bbar = oracle.evaluate(x).value.coeffs

    stream = SeededStream(seed).child(PHI_STREAM, _state_index(quantize(x.coeffs)))
    noise = StreamNoisePath(spec=problem.noise, eigenvalues=problem.eigenvalues, stream=stream)
    integral = np.zeros_like(y_batch)
    previous = None
    aborted = np.zeros(y_batch.shape[0], dtype=bool)
    for _, state, aborted in iterate_frozen(problem, x_batch, y_batch, n_steps, h_f, noise):
        current = problem.coeffs.slow_drift(x_batch, state) - bbar
        if previous is not None:
            integral += 0.5 * h_f * (previous + current)
        previous = current
    kept = integral[~aborted]
    estimate, stderr = block_statistics(kept, blocks=blocks, robust=not problem.coeffs.bounded)

    # C from every start point plus y = 0, with a margin
    starts = np.vstack([y_batch, np.zeros((1, problem.m))])
    start_x = np.tile(np.asarray(x.coeffs, dtype=np.float64), (starts.shape[0], 1))
    start_norms = np.linalg.norm(starts, axis=-1)
    ratios = np.linalg.norm(problem.coeffs.slow_drift(start_x, starts) - bbar, axis=-1) / (1.0 + x.norm() + start_norms)
    calibrated_c = PHI_C_MARGIN * float(np.max(ratios))
    scale = 1.0 + x.norm() + float(np.max(start_norms))
    truncation = calibrated_c * np.exp(-gap * horizon / 2.0) * scale / (gap / 2.0)

    status = STATUS_OK
    if float(np.linalg.norm(stderr)) > float(np.linalg.norm(estimate)):
        status = STATUS_UNDERPOWERED
    return PhiEstimate(
        value=SpectralField(coeffs=estimate, spectrum=problem.spectrum),
        stderr=np.asarray(stderr),
        truncation_bound=float(truncation),
        t_max=horizon,
        n_samples=int(kept.shape[0]),
        status=status,
        calibrated_c=calibrated_c,
    )


@dataclass(frozen=True)
class ErgodicityReport:
    times: np.ndarray
    gaps: np.ndarray
    gap_stderr: np.ndarray
    noise_floor: np.ndarray
    invariant_mean: float
    fitted_rate: float
    rate_stderr: float
    r_squared: float
    bound_rate: float
    n_used: int
    status: str = STATUS_OK

    @property
    def satisfies_bound(self) -> bool:
        # decay too fast to resolve still respects the bound
        return self.status == STATUS_UNRESOLVABLE or self.fitted_rate >= self.bound_rate


def measure_ergodic_decay(
    G: LipschitzFunctional,
    x: SpectralField,
    y: SpectralField,
    time_grid,
    n_samples: int,
    problem: Problem,
    params: EstimatorParams | None = None,
    invariant_mean: tuple[float, float] | None = None,
) -> ErgodicityReport:
    resolved = params or EstimatorParams()
    times = np.asarray(time_grid, dtype=np.float64)
    if times.ndim != 1 or times.size == 0 or np.any(times < 0.0) or np.any(np.diff(times) <= 0.0):
        raise ValueError("Time grid must be a nonempty increasing sequence of nonnegative times.")
    indices = np.rint(times / resolved.h_f).astype(int)
    if np.any(np.abs(indices * resolved.h_f - times) > 1e-9 * np.maximum(times, 1.0)):
        raise ValueError(f"Time grid points must be multiples of h_f = {resolved.h_f}.")
    mu_hat, mu_se = invariant_mean or estimate_invariant_mean(G, x, problem, resolved)

    stream = SeededStream(resolved.seed).child(ERGODIC_STREAM, _state_index(quantize(y.coeffs)))
    noise = StreamNoisePath(spec=problem.noise, eigenvalues=problem.eigenvalues, stream=stream)
    x_batch = np.tile(np.asarray(x.coeffs, dtype=np.float64), (n_samples, 1))
    y_batch = np.tile(np.asarray(y.coeffs, dtype=np.float64), (n_samples, 1))
    wanted = {int(index): position for position, index in enumerate(indices)}
    means = np.empty(times.size)
    stderrs = np.empty(times.size)
    for step_index, state, aborted in iterate_frozen(problem, x_batch, y_batch, int(indices[-1]), resolved.h_f, noise):
        position = wanted.get(step_index)
        if position is None:
            continue
        means[position], stderrs[position] = robust_mean(G.value(state[~aborted]), blocks=resolved.n_blocks)

    gaps = np.abs(means - mu_hat)
    gap_stderr = np.sqrt(stderrs**2 + mu_se**2)
    floor = SIGNIFICANCE_MULTIPLE * gap_stderr
    usable = gaps > floor
    bound_rate = problem.dissipativity_gap / 2.0
    if np.count_nonzero(usable) < 3:
        return ErgodicityReport(
            times=times,
            gaps=gaps,
            gap_stderr=gap_stderr,
            noise_floor=floor,
            invariant_mean=float(mu_hat),
            fitted_rate=float("nan"),
            rate_stderr=float("nan"),
            r_squared=float("nan"),
            bound_rate=bound_rate,
            n_used=int(np.count_nonzero(usable)),
            status=STATUS_UNRESOLVABLE,
        )
    fit = stats.linregress(times[usable], np.log(gaps[usable]))
    return ErgodicityReport(
        times=times,
        gaps=gaps,
        gap_stderr=gap_stderr,
        noise_floor=floor,
        invariant_mean=float(mu_hat),
        fitted_rate=float(-fit.slope),
        rate_stderr=float(fit.stderr),
        r_squared=float(fit.rvalue**2),
        bound_rate=bound_rate,
        n_used=int(np.count_nonzero(usable)),
    )


@dataclass(frozen=True)
class LipschitzScan:
    ratios: np.ndarray
    max_ratio: float
    cap: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.cap


def bbar_lipschitz_scan(
    problem: Problem,
    oracle: BbarOracle,
    pairs: list[tuple[SpectralField, SpectralField]],
) -> LipschitzScan:
    """Difference quotients of B-bar, capped by lip_B (1 + L_Fx / (lambda_1 - L_F)) plus estimator noise."""
    ratios = []
    noise_allowance = []
    for first, second in pairs:
        distance = float((first - second).norm())
        if distance == 0.0:
            continue
        one = oracle.evaluate(first)
        two = oracle.evaluate(second)
        ratios.append(float((one.value - two.value).norm()) / distance)
        noise_allowance.append(
            SIGNIFICANCE_MULTIPLE * float(np.sqrt(np.sum(one.stderr**2 + two.stderr**2))) / distance
        )
    if not ratios:
        raise ValueError("Lipschitz scan needs at least one pair of distinct states.")
    coeffs = problem.coeffs
    cap = coeffs.lip_B * (1.0 + coeffs.lip_F_x / problem.dissipativity_gap) + max(noise_allowance)
    values = np.array(ratios)
    return LipschitzScan(ratios=values, max_ratio=float(values.max()), cap=float(cap))


def linear_benchmark_phi(problem: Problem, x: SpectralField, y: SpectralField) -> SpectralField:
    """Closed-form corrector of the linear benchmark: b1 (y_k - m_k(x)) / (lambda_k + b)."""
    params = problem.coeffs.linear
    if params is None:
        raise ValueError("The closed-form corrector exists only for the linear benchmark.")
    eigenvalues = problem.eigenvalues
    stationary_mean = params.a * x.coeffs / (eigenvalues + params.b)
    return SpectralField(
        coeffs=params.b1 * (y.coeffs - stationary_mean) / (eigenvalues + params.b),
        spectrum=problem.spectrum,
    )
