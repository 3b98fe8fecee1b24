from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np
from scipy.linalg import expm

from .errors import AssumptionError
from .spectral import SineGrid, SpectralField, SpectrumSpec
from .stable_noise import (
    ROLE_FAST,
    ROLE_FROZEN,
    ROLE_SLOW,
    ROLE_STREAM_INDEX,
    A2Report,
    SeededStream,
    StableNoiseSpec,
    check_assumption_a2,
    convolution_increment_block,
)


logger = logging.getLogger(__name__)

DEFAULT_SUBSTEP_FRACTION = 0.0625
ArrayDrift = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PointFunction:
    name: str
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lip_u: float
    lip_v: float
    sup: float | None = None


POINT_FUNCTIONS: dict[str, PointFunction] = {
    "tanh_sum": PointFunction("tanh_sum", lambda u, v: np.tanh(u + v), lip_u=1.0, lip_v=1.0, sup=1.0),
    "sin_tanh": PointFunction("sin_tanh", lambda u, v: np.sin(u) * np.tanh(v), lip_u=1.0, lip_v=1.0, sup=1.0),
    "odd_tanh": PointFunction("odd_tanh", lambda u, v: np.tanh(v), lip_u=0.0, lip_v=1.0, sup=1.0),
    "sin_damped": PointFunction(
        "sin_damped", lambda u, v: np.sin(u) - 0.5 * np.tanh(v), lip_u=1.0, lip_v=0.5, sup=1.5
    ),
    "cos_only": PointFunction("cos_only", lambda u, v: np.cos(u), lip_u=1.0, lip_v=0.0, sup=1.0),
}


def resolve_point_function(name: str) -> PointFunction:
    try:
        return POINT_FUNCTIONS[name]
    except KeyError as exc:
        raise ValueError(f"Unknown point function '{name}'. Known: {sorted(POINT_FUNCTIONS)}") from exc


@dataclass(frozen=True)
class LinearParameters:
    a: float
    b: float
    b0: float
    b1: float


@dataclass(frozen=True, eq=False)
class CoefficientPair:
    """Slow drift B and fast drift F acting on raw coefficient arrays of shape (..., m)."""

    name: str
    m: int
    slow_drift: ArrayDrift
    fast_drift: ArrayDrift
    lip_B: float
    lip_F_x: float
    lip_F_y: float
    analytic_bbar: Callable[[np.ndarray], np.ndarray] | None = None
    sup_B: float | None = None
    linear: LinearParameters | None = None

    @property
    def bounded(self) -> bool:
        return self.sup_B is not None

    def B(self, x: SpectralField, y: SpectralField) -> SpectralField:
        return SpectralField(coeffs=self.slow_drift(x.coeffs, y.coeffs), spectrum=x.spectrum)

    def F(self, x: SpectralField, y: SpectralField) -> SpectralField:
        return SpectralField(coeffs=self.fast_drift(x.coeffs, y.coeffs), spectrum=y.spectrum)


def linear_benchmark(
    spectrum: SpectrumSpec,
    a: float = 1.0,
    b: float = 1.0,
    b0: float = 0.5,
    b1: float = 1.0,
) -> CoefficientPair:
    if b < 0.0:
        raise ValueError(f"Fast self-damping b must be nonnegative, got {b}.")
    eigenvalues = spectrum.eigenvalues

    def slow_drift(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return b0 * x + b1 * y

    def fast_drift(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return a * x - b * y

    def analytic_bbar(x: np.ndarray) -> np.ndarray:
        # stationary mean of the frozen equation solves 0 = -(lambda_k + b) m_k + a x_k
        return b0 * x + b1 * a * x / (eigenvalues + b)

    return CoefficientPair(
        name="linear",
        m=spectrum.m,
        slow_drift=slow_drift,
        fast_drift=fast_drift,
        lip_B=max(abs(b0), abs(b1)),
        lip_F_x=abs(a),
        lip_F_y=b,
        analytic_bbar=analytic_bbar,
        linear=LinearParameters(a=a, b=b, b0=b0, b1=b1),
    )


def nemytskii_coefficients(
    spectrum: SpectrumSpec,
    b_point: PointFunction,
    f_point: PointFunction,
    grid: SineGrid | None = None,
) -> CoefficientPair:
    resolved_grid = grid or SineGrid.for_modes(spectrum.m)
    if resolved_grid.m != spectrum.m:
        raise ValueError(f"Sine grid width {resolved_grid.m} does not match spectrum width {spectrum.m}.")

    def pointwise(function: PointFunction) -> ArrayDrift:
        def drift(x: np.ndarray, y: np.ndarray) -> np.ndarray:
            values = function.value(resolved_grid.values_from_coeffs(x), resolved_grid.values_from_coeffs(y))
            return resolved_grid.coeffs_from_values(values)

        return drift

    return CoefficientPair(
        name=f"nemytskii({b_point.name},{f_point.name})",
        m=spectrum.m,
        slow_drift=pointwise(b_point),
        fast_drift=pointwise(f_point),
        lip_B=max(b_point.lip_u, b_point.lip_v),
        lip_F_x=f_point.lip_u,
        lip_F_y=f_point.lip_v,
        sup_B=b_point.sup,
    )


@dataclass(frozen=True)
class LipschitzSpotCheck:
    max_ratio_B: float
    max_ratio_F_y: float
    lip_B: float
    lip_F_y: float
    passed: bool


def spot_check_lipschitz(
    coeffs: CoefficientPair,
    stream: SeededStream,
    n_pairs: int = 200,
    scale: float = 1.0,
    tolerance: float = 0.01,
) -> LipschitzSpotCheck:
    generator = stream.generator()
    shape = (n_pairs, coeffs.m)
    x1, x2, y1, y2 = (scale * generator.standard_normal(shape) for _ in range(4))
    norm = lambda values: np.linalg.norm(values, axis=-1)  # noqa: E731
    ratio_B = norm(coeffs.slow_drift(x1, y1) - coeffs.slow_drift(x2, y2)) / (norm(x1 - x2) + norm(y1 - y2))
    ratio_F = norm(coeffs.fast_drift(x1, y1) - coeffs.fast_drift(x1, y2)) / norm(y1 - y2)
    max_B = float(ratio_B.max())
    max_F = float(ratio_F.max())
    return LipschitzSpotCheck(
        max_ratio_B=max_B,
        max_ratio_F_y=max_F,
        lip_B=coeffs.lip_B,
        lip_F_y=coeffs.lip_F_y,
        passed=max_B <= coeffs.lip_B * (1.0 + tolerance) and max_F <= coeffs.lip_F_y * (1.0 + tolerance),
    )


@dataclass(frozen=True, eq=False)
class Problem:
    spectrum: SpectrumSpec
    coeffs: CoefficientPair
    noise: StableNoiseSpec
    epsilon: float
    a2_report: A2Report = field(init=False)

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ValueError(f"Scale parameter epsilon must be positive, got {self.epsilon}.")
        if self.coeffs.m != self.spectrum.m or self.noise.m != self.spectrum.m:
            raise ValueError(
                f"Width mismatch: spectrum {self.spectrum.m}, coefficients {self.coeffs.m}, noise {self.noise.m}."
            )
        gap = self.spectrum.lambda_1 - self.coeffs.lip_F_y
        if gap <= 0.0:
            raise AssumptionError(
                f"Dissipativity lambda_1 - L_F > 0 fails: lambda_1 = {self.spectrum.lambda_1:.4f}, "
                f"L_F = {self.coeffs.lip_F_y:.4f}."
            )
        object.__setattr__(self, "a2_report", check_assumption_a2(self.noise, self.spectrum))

    @property
    def m(self) -> int:
        return self.spectrum.m

    @property
    def dissipativity_gap(self) -> float:
        return self.spectrum.lambda_1 - self.coeffs.lip_F_y

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.spectrum.eigenvalues

    def with_epsilon(self, epsilon: float) -> Problem:
        return replace(self, epsilon=epsilon)

    def with_noise(self, noise: StableNoiseSpec) -> Problem:
        return replace(self, noise=noise)


@dataclass(frozen=True, eq=False)
class SlowFastState:
    x: SpectralField
    y: SpectralField
    t: float = 0.0

    def __post_init__(self) -> None:
        if not self.x.spectrum.matches(self.y.spectrum):
            raise ValueError("Slow and fast components live on different spectra.")
        if self.t < 0.0:
            raise ValueError(f"State time must be nonnegative, got {self.t}.")


class NoisePath(Protocol):
    def increment(self, role: str, index: int, dt: float, n_samples: int) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class StreamNoisePath:
    spec: StableNoiseSpec
    eigenvalues: np.ndarray
    stream: SeededStream
    epsilon: float | None = None

    def increment(self, role: str, index: int, dt: float, n_samples: int) -> np.ndarray:
        return convolution_increment_block(
            self.spec,
            self.eigenvalues,
            dt,
            role,
            self.stream.child(ROLE_STREAM_INDEX[role], index),
            n_samples,
            epsilon=self.epsilon,
        )


@dataclass(frozen=True, eq=False)
class CoarsenedNoisePath:
    """Coarse increments composed from `factor` fine ones: I = sum_i e^{-rate (factor-1-i) dt_f} I_i."""

    fine: NoisePath
    eigenvalues: np.ndarray
    epsilon: float | None = None
    slow_factor: int = 2
    fast_factor: int = 1

    def increment(self, role: str, index: int, dt: float, n_samples: int) -> np.ndarray:
        factor = self.slow_factor if role == ROLE_SLOW else self.fast_factor
        rate = self.eigenvalues / self.epsilon if role == ROLE_FAST else self.eigenvalues
        fine_dt = dt / factor
        total = np.zeros((n_samples, self.eigenvalues.size))
        for offset in range(factor):
            decay = np.exp(-rate * (factor - 1 - offset) * fine_dt)
            total += decay * self.fine.increment(role, index * factor + offset, fine_dt, n_samples)
        return total


@dataclass(eq=False)
class RecordingNoisePath:
    inner: NoisePath
    consumed: list[tuple[str, int, float]] = field(default_factory=list)

    def increment(self, role: str, index: int, dt: float, n_samples: int) -> np.ndarray:
        self.consumed.append((role, index, dt))
        return self.inner.increment(role, index, dt, n_samples)

    def addresses(self, role: str) -> list[tuple[int, float]]:
        return [(index, dt) for recorded_role, index, dt in self.consumed if recorded_role == role]


def resolve_noise_path(
    problem: Problem,
    noise: NoisePath | SeededStream,
    epsilon: float | None = None,
) -> NoisePath:
    if isinstance(noise, SeededStream):
        return StreamNoisePath(
            spec=problem.noise,
            eigenvalues=problem.eigenvalues,
            stream=noise,
            epsilon=problem.epsilon if epsilon is None else epsilon,
        )
    return noise


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray | None
    aborted: np.ndarray
    spectrum: SpectrumSpec

    @property
    def n_samples(self) -> int:
        return int(self.aborted.size)

    @property
    def aborted_count(self) -> int:
        return int(np.count_nonzero(self.aborted))

    def slow_field(self, time_index: int) -> SpectralField:
        return SpectralField(coeffs=self.x[time_index], spectrum=self.spectrum)

    def fast_field(self, time_index: int) -> SpectralField:
        if self.y is None:
            raise ValueError("This trajectory did not keep its fast component.")
        return SpectralField(coeffs=self.y[time_index], spectrum=self.spectrum)

    def final_state(self) -> SlowFastState:
        y = self.fast_field(-1) if self.y is not None else SpectralField.zeros(self.spectrum, self.x.shape[1:-1])
        return SlowFastState(x=self.slow_field(-1), y=y, t=float(self.times[-1]))


def _phi1(rate: np.ndarray, dt: float) -> np.ndarray:
    # (1 - e^{-rate dt}) / rate
    return -np.expm1(-rate * dt) / rate


def substep_count(h: float, epsilon: float, c_sub: float = DEFAULT_SUBSTEP_FRACTION) -> int:
    ratio = h / (c_sub * epsilon)
    return max(1, math.ceil(ratio * (1.0 - 1e-12)))


def step_count(T: float, h: float) -> int:
    if h <= 0.0:
        raise ValueError(f"Step size must be positive, got {h}.")
    if T < 0.0:
        raise ValueError(f"Horizon must be nonnegative, got {T}.")
    n_steps = int(round(T / h))
    if abs(n_steps * h - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"Step size {h} does not divide horizon {T}.")
    return n_steps


def _as_batch(field_value: SpectralField, n_samples: int | None) -> np.ndarray:
    coeffs = np.array(field_value.coeffs, dtype=np.float64)
    if coeffs.ndim == 1:
        return np.tile(coeffs, (n_samples or 1, 1))
    if coeffs.ndim != 2:
        raise ValueError("Integrators take a single field or a 1-d ensemble of fields.")
    if n_samples is not None and coeffs.shape[0] != n_samples:
        raise ValueError(f"Ensemble size {coeffs.shape[0]} does not match n_samples {n_samples}.")
    return coeffs


def _quarantine(aborted: np.ndarray, *arrays: np.ndarray) -> int:
    bad = np.zeros_like(aborted)
    for array in arrays:
        bad |= ~np.all(np.isfinite(array), axis=-1)
    fresh = bad & ~aborted
    aborted |= bad
    for array in arrays:
        array[aborted] = 0.0
    return int(np.count_nonzero(fresh))


def _multiscale_advance(
    problem: Problem,
    x: np.ndarray,
    y: np.ndarray,
    h: float,
    noise: NoisePath,
    step_index: int,
    n_sub: int,
) -> tuple[np.ndarray, np.ndarray]:
    eigenvalues = problem.eigenvalues
    epsilon = problem.epsilon
    n_samples = x.shape[0]
    with np.errstate(over="ignore", invalid="ignore"):
        slow_noise = noise.increment(ROLE_SLOW, step_index, h, n_samples)
        delta = h / n_sub
        fast_decay = np.exp(-eigenvalues * delta / epsilon)
        fast_gain = -np.expm1(-eigenvalues * delta / epsilon) / eigenvalues
        y_next = y
        drift_sum = np.zeros_like(x)
        for substep in range(n_sub):
            # slow variable frozen at its macro-step start value
            drift_sum += problem.coeffs.slow_drift(x, y_next)
            y_next = (
                fast_decay * y_next
                + fast_gain * problem.coeffs.fast_drift(x, y_next)
                + noise.increment(ROLE_FAST, step_index * n_sub + substep, delta, n_samples)
            )
        # B averaged over the fast substeps
        x_next = np.exp(-eigenvalues * h) * x + _phi1(eigenvalues, h) * (drift_sum / n_sub) + slow_noise
    return x_next, y_next


def step_multiscale(
    problem: Problem,
    state: SlowFastState,
    h: float,
    noise: NoisePath | SeededStream,
    step_index: int = 0,
    c_sub: float = DEFAULT_SUBSTEP_FRACTION,
) -> SlowFastState:
    if h <= 0.0:
        raise ValueError(f"Step size must be positive, got {h}.")
    single = state.x.coeffs.ndim == 1
    x = _as_batch(state.x, None)
    y = _as_batch(state.y, x.shape[0])
    path = resolve_noise_path(problem, noise)
    x_next, y_next = _multiscale_advance(
        problem, x, y, h, path, step_index, substep_count(h, problem.epsilon, c_sub)
    )
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(y_next))):
        raise FloatingPointError(f"Non-finite state after multiscale step {step_index} (t = {state.t + h:.6g}).")
    if single:
        x_next, y_next = x_next[0], y_next[0]
    return SlowFastState(
        x=SpectralField(coeffs=x_next, spectrum=problem.spectrum),
        y=SpectralField(coeffs=y_next, spectrum=problem.spectrum),
        t=state.t + h,
    )


def simulate_multiscale(
    problem: Problem,
    x0: SpectralField,
    y0: SpectralField,
    T: float,
    h: float,
    noise: NoisePath | SeededStream,
    n_samples: int | None = None,
    c_sub: float = DEFAULT_SUBSTEP_FRACTION,
    keep_fast: bool = True,
) -> Trajectory:
    n_steps = step_count(T, h)
    x = _as_batch(x0, n_samples)
    y = _as_batch(y0, x.shape[0])
    path = resolve_noise_path(problem, noise)
    n_sub = substep_count(h, problem.epsilon, c_sub)
    aborted = np.zeros(x.shape[0], dtype=bool)
    xs = np.empty((n_steps + 1,) + x.shape)
    ys = np.empty((n_steps + 1,) + y.shape) if keep_fast else None
    xs[0] = x
    if ys is not None:
        ys[0] = y
    newly_aborted = 0
    for step_index in range(n_steps):
        x, y = _multiscale_advance(problem, x, y, h, path, step_index, n_sub)
        newly_aborted += _quarantine(aborted, x, y)
        xs[step_index + 1] = x
        if ys is not None:
            ys[step_index + 1] = y
    if newly_aborted:
        logger.warning("multiscale run aborted %d of %d samples (epsilon=%g)", newly_aborted, x.shape[0], problem.epsilon)
    return Trajectory(
        times=np.arange(n_steps + 1) * h,
        x=xs,
        y=ys,
        aborted=aborted,
        spectrum=problem.spectrum,
    )


def iterate_frozen(
    problem: Problem,
    x_frozen: np.ndarray,
    y0: np.ndarray,
    n_steps: int,
    h: float,
    noise: NoisePath,
):
    """Yield (step, Y) for the frozen equation dY = [AY + F(x, Y)]dt + dZ on raw arrays."""
    eigenvalues = problem.eigenvalues
    decay = np.exp(-eigenvalues * h)
    gain = _phi1(eigenvalues, h)
    y = np.array(y0, dtype=np.float64)
    aborted = np.zeros(y.shape[0], dtype=bool)
    yield 0, y, aborted
    for step_index in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            y = (
                decay * y
                + gain * problem.coeffs.fast_drift(x_frozen, y)
                + noise.increment(ROLE_FROZEN, step_index, h, y.shape[0])
            )
        _quarantine(aborted, y)
        yield step_index + 1, y, aborted


def simulate_frozen(
    problem: Problem,
    x_frozen: SpectralField,
    y0: SpectralField,
    T: float,
    h: float,
    noise: NoisePath | SeededStream,
    n_samples: int | None = None,
) -> Trajectory:
    n_steps = step_count(T, h)
    y = _as_batch(y0, n_samples)
    x = _as_batch(x_frozen, y.shape[0])
    path = resolve_noise_path(problem, noise)
    ys = np.empty((n_steps + 1,) + y.shape)
    aborted = np.zeros(y.shape[0], dtype=bool)
    for step_index, state, aborted in iterate_frozen(problem, x, y, n_steps, h, path):
        ys[step_index] = state
    if aborted.any():
        logger.warning("frozen run aborted %d of %d samples", int(aborted.sum()), y.shape[0])
    return Trajectory(times=np.arange(n_steps + 1) * h, x=ys, y=None, aborted=aborted, spectrum=problem.spectrum)


def simulate_averaged(
    problem: Problem,
    bbar: Callable[[np.ndarray], np.ndarray],
    x0: SpectralField,
    T: float,
    h: float,
    noise: NoisePath | SeededStream,
    n_samples: int | None = None,
) -> Trajectory:
    """Averaged slow equation; reusing a multiscale run's slow addresses couples the two paths."""
    n_steps = step_count(T, h)
    x = _as_batch(x0, n_samples)
    path = resolve_noise_path(problem, noise)
    eigenvalues = problem.eigenvalues
    decay = np.exp(-eigenvalues * h)
    gain = _phi1(eigenvalues, h)
    aborted = np.zeros(x.shape[0], dtype=bool)
    xs = np.empty((n_steps + 1,) + x.shape)
    xs[0] = x
    for step_index in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            x = decay * x + gain * bbar(x) + path.increment(ROLE_SLOW, step_index, h, x.shape[0])
        _quarantine(aborted, x)
        xs[step_index + 1] = x
    if aborted.any():
        logger.warning("averaged run aborted %d of %d samples", int(aborted.sum()), x.shape[0])
    return Trajectory(times=np.arange(n_steps + 1) * h, x=xs, y=None, aborted=aborted, spectrum=problem.spectrum)


def _require_linear(problem: Problem) -> LinearParameters:
    if problem.coeffs.linear is None:
        raise ValueError("Exact flows exist only for the linear benchmark.")
    return problem.coeffs.linear


def exact_linear_flow(problem: Problem, x0: SpectralField, y0: SpectralField, t: float) -> SlowFastState:
    """Noise-free multiscale flow of the linear benchmark via the 2m x 2m matrix exponential."""
    params = _require_linear(problem)
    eigenvalues = problem.eigenvalues
    m = problem.m
    generator = np.zeros((2 * m, 2 * m))
    index = np.arange(m)
    generator[index, index] = -eigenvalues + params.b0
    generator[index, m + index] = params.b1
    generator[m + index, index] = params.a / problem.epsilon
    generator[m + index, m + index] = -(eigenvalues + params.b) / problem.epsilon
    state = np.concatenate([x0.coeffs, y0.coeffs], axis=-1)
    evolved = state @ expm(generator * t).T
    return SlowFastState(
        x=SpectralField(coeffs=evolved[..., :m], spectrum=problem.spectrum),
        y=SpectralField(coeffs=evolved[..., m:], spectrum=problem.spectrum),
        t=t,
    )


def exact_averaged_linear_flow(problem: Problem, x0: SpectralField, t: float) -> SpectralField:
    params = _require_linear(problem)
    eigenvalues = problem.eigenvalues
    rate = -eigenvalues + params.b0 + params.b1 * params.a / (eigenvalues + params.b)
    return SpectralField(coeffs=x0.coeffs * np.exp(rate * t), spectrum=problem.spectrum)
