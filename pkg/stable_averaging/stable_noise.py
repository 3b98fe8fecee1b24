from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import AssumptionError
from .spectral import SpectralField, SpectrumSpec


ROLE_SLOW = "slow"
ROLE_FAST = "fast"
ROLE_FROZEN = "frozen"
ROLE_STREAM_INDEX = {ROLE_SLOW: 0, ROLE_FAST: 1, ROLE_FROZEN: 2}

STATIONARY_EXPONENT_LIMIT = 700.0
SMALL_EXPONENT_LIMIT = 1e-12
A2_STATUS_PASS = "pass"
A2_STATUS_FAIL = "fail"
A2_STATUS_UNDETERMINED = "undetermined"


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 1.0 < alpha < 2.0:
        raise AssumptionError(f"Stability index alpha must lie in (1, 2), got {alpha}.")
    return alpha


@dataclass(frozen=True)
class SeededStream:
    """Counter-based substream: draws depend only on (master_seed, stream_path)."""

    master_seed: int
    stream_path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError(f"Master seed must fit in 64 unsigned bits, got {self.master_seed}.")
        if any(int(index) < 0 for index in self.stream_path):
            raise ValueError(f"Stream path indices must be nonnegative: {self.stream_path}")
        object.__setattr__(self, "stream_path", tuple(int(index) for index in self.stream_path))

    def child(self, *indices: int) -> SeededStream:
        return SeededStream(master_seed=self.master_seed, stream_path=self.stream_path + tuple(indices))

    def key(self) -> int:
        digest = hashlib.blake2b(digest_size=16, person=b"slowfast-stream")
        digest.update(int(self.master_seed).to_bytes(8, "little"))
        digest.update(len(self.stream_path).to_bytes(4, "little"))
        for index in self.stream_path:
            digest.update(int(index).to_bytes(8, "little"))
        return int.from_bytes(digest.digest(), "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key()))


def _chambers_mallows_stuck(alpha: float, angle: np.ndarray, exponential: np.ndarray) -> np.ndarray:
    # symmetric case: E exp(iuX) = exp(-|u|^alpha)
    return (
        np.sin(alpha * angle)
        / np.cos(angle) ** (1.0 / alpha)
        * (np.cos(angle - alpha * angle) / exponential) ** ((1.0 - alpha) / alpha)
    )


def _draw_standard_stable(alpha: float, stream: SeededStream, shape: tuple[int, ...]) -> np.ndarray:
    uniform = stream.child(0).generator().random(shape)
    angle = math.pi * (uniform - 0.5)
    exponential = stream.child(1).generator().standard_exponential(shape)
    return _chambers_mallows_stuck(alpha, angle, exponential)


def sample_standard_stable(alpha: float, stream: SeededStream, size: int | tuple[int, ...] | None = None):
    alpha = check_alpha(alpha)
    if size is None:
        return float(_draw_standard_stable(alpha, stream, (1,))[0])
    shape = (size,) if isinstance(size, int) else tuple(size)
    return _draw_standard_stable(alpha, stream, shape)


def standard_stable_block(alpha: float, stream: SeededStream, m: int, n_samples: int) -> np.ndarray:
    """(n_samples, m) draws generated mode-major, so a narrower m sees the same low-mode values."""
    alpha = check_alpha(alpha)
    return _draw_standard_stable(alpha, stream, (m, n_samples)).T


def convolution_increment_scale(lam, h, weight, alpha: float):
    alpha = check_alpha(alpha)
    lam = np.asarray(lam, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    h = float(h)
    if h < 0.0:
        raise ValueError(f"Increment length must be nonnegative, got {h}.")
    if np.any(lam <= 0.0):
        raise ValueError("Convolution rate lambda must be positive.")
    exponent = lam * h
    stationary = (1.0 / (alpha * lam)) ** (1.0 / alpha)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        regular = (-np.expm1(-alpha * exponent) / (alpha * lam)) ** (1.0 / alpha)
    scale = np.where(
        exponent > STATIONARY_EXPONENT_LIMIT,
        stationary,
        np.where(exponent < SMALL_EXPONENT_LIMIT, h ** (1.0 / alpha), regular),
    )
    scale = weight * scale
    return float(scale) if scale.ndim == 0 else scale


def sample_increment(alpha: float, h: float, weight: float, stream: SeededStream, size=None):
    if h < 0.0:
        raise ValueError(f"Increment length must be nonnegative, got {h}.")
    draw = sample_standard_stable(alpha, stream, size=size)
    return weight * h ** (1.0 / alpha) * draw


@dataclass(frozen=True)
class PowerDecay:
    """beta_k = c_beta k^-rho_beta, gamma_k = c_gamma k^-rho_gamma."""

    rho_beta: float
    rho_gamma: float
    c_beta: float = 1.0
    c_gamma: float = 1.0

    def slow_weights(self, m: int) -> np.ndarray:
        return self.c_beta * np.arange(1, m + 1, dtype=np.float64) ** (-self.rho_beta)

    def fast_weights(self, m: int) -> np.ndarray:
        return self.c_gamma * np.arange(1, m + 1, dtype=np.float64) ** (-self.rho_gamma)


@dataclass(frozen=True, eq=False)
class StableNoiseSpec:
    alpha: float
    slow_weights: np.ndarray
    fast_weights: np.ndarray
    decay_model: PowerDecay | None = None

    def __post_init__(self) -> None:
        check_alpha(self.alpha)
        for name in ("slow_weights", "fast_weights"):
            weights = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if weights.ndim != 1:
                raise ValueError(f"{name} must be a 1-d vector.")
            if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
                raise ValueError(f"{name} must be finite and nonnegative.")
            weights.setflags(write=False)
            object.__setattr__(self, name, weights)
        if self.slow_weights.size != self.fast_weights.size:
            raise ValueError("Slow and fast weight vectors must have the same length.")

    @classmethod
    def power_law(cls, alpha: float, m: int, decay: PowerDecay) -> StableNoiseSpec:
        return cls(
            alpha=alpha,
            slow_weights=decay.slow_weights(m),
            fast_weights=decay.fast_weights(m),
            decay_model=decay,
        )

    @property
    def m(self) -> int:
        return int(self.slow_weights.size)

    def truncated(self, m_target: int) -> StableNoiseSpec:
        if not 1 <= m_target <= self.m:
            raise ValueError(f"Cannot truncate {self.m}-mode noise to {m_target} modes.")
        return StableNoiseSpec(
            alpha=self.alpha,
            slow_weights=self.slow_weights[:m_target],
            fast_weights=self.fast_weights[:m_target],
            decay_model=self.decay_model,
        )

    def silenced(self) -> StableNoiseSpec:
        return StableNoiseSpec(
            alpha=self.alpha,
            slow_weights=np.zeros(self.m),
            fast_weights=np.zeros(self.m),
            decay_model=None,
        )


def increment_scales(
    spec: StableNoiseSpec,
    eigenvalues: np.ndarray,
    h: float,
    role: str,
    epsilon: float | None = None,
) -> np.ndarray:
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    if eigenvalues.size != spec.m:
        raise ValueError(f"Noise spec has {spec.m} modes but {eigenvalues.size} eigenvalues were given.")
    if role == ROLE_SLOW:
        return convolution_increment_scale(eigenvalues, h, spec.slow_weights, spec.alpha)
    if role == ROLE_FROZEN:
        return convolution_increment_scale(eigenvalues, h, spec.fast_weights, spec.alpha)
    if role == ROLE_FAST:
        if epsilon is None or epsilon <= 0.0:
            raise ValueError("Fast-role increments need epsilon > 0.")
        # eps^{-1/alpha} prefactor against rate lambda/eps collapses to gamma ((1-e^{-a lam h/eps})/(a lam))^{1/a}
        weight = spec.fast_weights * epsilon ** (-1.0 / spec.alpha)
        return convolution_increment_scale(eigenvalues / epsilon, h, weight, spec.alpha)
    raise ValueError(f"Unknown noise role: {role}")


def convolution_increment_block(
    spec: StableNoiseSpec,
    eigenvalues: np.ndarray,
    h: float,
    role: str,
    stream: SeededStream,
    n_samples: int,
    epsilon: float | None = None,
) -> np.ndarray:
    scales = increment_scales(spec, eigenvalues, h, role, epsilon)
    if h == 0.0 or not np.any(scales):
        return np.zeros((n_samples, spec.m))
    return standard_stable_block(spec.alpha, stream, spec.m, n_samples) * scales


def cylindrical_convolution_increment(
    spec: StableNoiseSpec,
    spectrum: SpectrumSpec,
    h: float,
    role: str,
    stream: SeededStream,
    epsilon: float | None = None,
    n_samples: int | None = None,
) -> SpectralField:
    block = convolution_increment_block(
        spec,
        spectrum.eigenvalues,
        h,
        role,
        stream,
        n_samples=1 if n_samples is None else n_samples,
        epsilon=epsilon,
    )
    coeffs = block[0] if n_samples is None else block
    return SpectralField(coeffs=coeffs, spectrum=spectrum)


@dataclass(frozen=True)
class A2Report:
    alpha: float
    growth_exponent: float
    slow_series_status: str
    fast_series_status: str
    slow_series_exponent: float | None
    fast_series_exponent: float | None
    slow_partial_sum: float
    fast_partial_sum: float
    slow_wellposed_status: str
    fast_wellposed_status: str
    slow_wellposed_partial_sum: float
    fast_wellposed_partial_sum: float
    decay_model: str

    @property
    def passed(self) -> bool:
        return self.slow_series_status == A2_STATUS_PASS and self.fast_series_status == A2_STATUS_PASS


def _series_status(exponent: float | None) -> str:
    if exponent is None or not math.isfinite(exponent):
        return A2_STATUS_UNDETERMINED
    return A2_STATUS_PASS if exponent > 1.0 else A2_STATUS_FAIL


def check_assumption_a2(
    spec: StableNoiseSpec,
    spectrum: SpectrumSpec,
    decay_model: PowerDecay | None = None,
) -> A2Report:
    """Series tests for sum beta^a lambda^{a-1} and sum gamma^a, with lambda_k ~ k^q."""
    alpha = spec.alpha
    eigenvalues = spectrum.eigenvalues
    if eigenvalues.size != spec.m:
        raise ValueError(f"Noise spec has {spec.m} modes but the spectrum has {spectrum.m}.")
    model = decay_model or spec.decay_model
    q = spectrum.growth_exponent()

    slow_exponent = fast_exponent = slow_wellposed_exponent = fast_wellposed_exponent = None
    if model is not None:
        slow_exponent = alpha * model.rho_beta - q * (alpha - 1.0)
        fast_exponent = alpha * model.rho_gamma
        slow_wellposed_exponent = alpha * model.rho_beta + q
        fast_wellposed_exponent = alpha * model.rho_gamma + q
        if model.c_beta == 0.0:
            slow_exponent = slow_wellposed_exponent = math.inf
        if model.c_gamma == 0.0:
            fast_exponent = fast_wellposed_exponent = math.inf

    beta_alpha = spec.slow_weights**alpha
    gamma_alpha = spec.fast_weights**alpha
    return A2Report(
        alpha=alpha,
        growth_exponent=q,
        slow_series_status=_series_status(slow_exponent),
        fast_series_status=_series_status(fast_exponent),
        slow_series_exponent=slow_exponent,
        fast_series_exponent=fast_exponent,
        slow_partial_sum=float(np.sum(beta_alpha * eigenvalues ** (alpha - 1.0))),
        fast_partial_sum=float(np.sum(gamma_alpha)),
        slow_wellposed_status=_series_status(slow_wellposed_exponent),
        fast_wellposed_status=_series_status(fast_wellposed_exponent),
        slow_wellposed_partial_sum=float(np.sum(beta_alpha / eigenvalues)),
        fast_wellposed_partial_sum=float(np.sum(gamma_alpha / eigenvalues)),
        decay_model="unknown" if model is None else f"power(rho_beta={model.rho_beta}, rho_gamma={model.rho_gamma})",
    )


def convolution_moment_bound(spec: StableNoiseSpec, spectrum: SpectrumSpec, theta: float, p: float) -> float:
    """(sum_k beta_k^a / lambda_k^{1 - a theta/2})^{p/a}, the stationary convolution moment scale."""
    if not 0.0 < p < spec.alpha:
        raise AssumptionError(f"Moment order must satisfy 0 < p < alpha, got p = {p}.")
    alpha = spec.alpha
    series = np.sum(spec.slow_weights**alpha / spectrum.eigenvalues ** (1.0 - alpha * theta / 2.0))
    return float(series ** (p / alpha))


@dataclass(frozen=True)
class CFPoint:
    u: float
    mean: float
    stderr: float
    imag_mean: float
    imag_stderr: float


def empirical_cf(samples, u_grid) -> list[CFPoint]:
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("Empirical characteristic function needs at least one sample.")
    points: list[CFPoint] = []
    for u in np.atleast_1d(np.asarray(u_grid, dtype=np.float64)):
        phase = u * samples
        cos_values = np.cos(phase)
        sin_values = np.sin(phase)
        denominator = math.sqrt(samples.size)
        points.append(
            CFPoint(
                u=float(u),
                mean=float(cos_values.mean()),
                stderr=float(cos_values.std() / denominator),
                imag_mean=float(sin_values.mean()),
                imag_stderr=float(sin_values.std() / denominator),
            )
        )
    return points


@dataclass(frozen=True)
class CFCheck:
    u: float
    observed: float
    expected: float
    stderr: float
    z_score: float
    imag_z_score: float
    passed: bool


def check_stable_cf(samples, alpha: float, scale: float, u_points, n_stderr: float = 3.0) -> list[CFCheck]:
    checks: list[CFCheck] = []
    for point in empirical_cf(samples, u_points):
        expected = math.exp(-((scale * abs(point.u)) ** alpha))
        # floor keeps a degenerate (zero-variance) estimate from dividing by zero
        stderr = max(point.stderr, 1e-12)
        z_score = (point.mean - expected) / stderr
        imag_z = point.imag_mean / max(point.imag_stderr, 1e-12)
        checks.append(
            CFCheck(
                u=point.u,
                observed=point.mean,
                expected=expected,
                stderr=point.stderr,
                z_score=float(z_score),
                imag_z_score=float(imag_z),
                passed=abs(z_score) <= n_stderr and abs(imag_z) <= n_stderr,
            )
        )
    return checks


def stable_cdf(x: float, alpha: float) -> float:
    """Gil-Pelaez inversion of exp(-|u|^alpha)."""
    alpha = check_alpha(alpha)
    if x == 0.0:
        return 0.5

    def integrand(u: float) -> float:
        return math.exp(-(u**alpha)) * math.sin(u * x) / u

    value, _ = integrate.quad(integrand, 0.0, np.inf, limit=400)
    return 0.5 + value / math.pi


def stable_quantile(q: float, alpha: float) -> float:
    if not 0.0 < q < 1.0:
        raise ValueError(f"Quantile level must lie in (0, 1), got {q}.")
    bound = 1.0
    while stable_cdf(bound, alpha) < q or stable_cdf(-bound, alpha) > q:
        bound *= 2.0
    return float(optimize.brentq(lambda x: stable_cdf(x, alpha) - q, -bound, bound, xtol=1e-10))
