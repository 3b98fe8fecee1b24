from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Callable, TypeVar

import numpy as np
from tqdm import tqdm

from .averaging import (
    BBAR_ANALYTIC,
    BbarOracle,
    ErgodicityReport,
    EstimatorParams,
    LipschitzFunctional,
    bounded_first_coordinate,
    estimate_bbar,
    estimate_phi,
    first_coordinate,
    linear_benchmark_phi,
    measure_ergodic_decay,
)
from .config import (
    COEFFICIENTS_LINEAR,
    ExperimentConfig,
    RuntimeConfig,
    load_runtime_config,
)
from .dynamics import (
    Problem,
    StreamNoisePath,
    iterate_frozen,
    linear_benchmark,
    nemytskii_coefficients,
    resolve_point_function,
    simulate_averaged,
    simulate_multiscale,
)
from .errors import ExperimentFailure, FitError
from .rates import (
    RateFit,
    RateRow,
    RateTable,
    block_statistics,
    fit_loglog,
    joint_stderr,
    monotonicity_violations,
    robust_mean,
    strong_reference_slope,
)
from .spectral import SpectralField, SpectrumSpec, embed
from .stable_noise import (
    ROLE_SLOW,
    PowerDecay,
    SeededStream,
    StableNoiseSpec,
    check_stable_cf,
    convolution_increment_block,
    convolution_increment_scale,
    sample_standard_stable,
)

logger = logging.getLogger(__name__)

ABORT_LIMIT = 0.05
STRONG_STREAM = 1
UNCOUPLED_STREAM = 2
WEAK_STREAM = 3
GALERKIN_STREAM = 4
CONTRACTION_STREAM = 5
MOMENT_STREAM = 6
NOISE_CHECK_STREAM = 7

STATUS_OK = "ok"
STATUS_FIT_REJECTED = "fit_rejected"
STATUS_NON_MONOTONE = "non_monotone"

ChunkResult = TypeVar("ChunkResult")
FUNCTIONALS: dict[str, Callable[[], LipschitzFunctional]] = {
    "first_coordinate": first_coordinate,
    "tanh_first_coordinate": bounded_first_coordinate,
}


def build_problem(
    config: ExperimentConfig,
    epsilon: float,
    m: int | None = None,
    coefficients: str | None = None,
) -> Problem:
    settings = config.problem
    spectrum = SpectrumSpec.from_preset(settings.spectrum, m or settings.m)
    family = coefficients or settings.coefficients
    if family == COEFFICIENTS_LINEAR:
        coeffs = linear_benchmark(spectrum, a=settings.a, b=settings.b, b0=settings.b0, b1=settings.b1)
    else:
        coeffs = nemytskii_coefficients(
            spectrum,
            resolve_point_function(settings.b_point),
            resolve_point_function(settings.f_point),
        )
    noise_settings = config.noise
    decay = PowerDecay(noise_settings.rho_beta, noise_settings.rho_gamma, noise_settings.c_beta, noise_settings.c_gamma)
    noise = StableNoiseSpec.power_law(noise_settings.alpha, spectrum.m, decay)
    return Problem(spectrum=spectrum, coeffs=coeffs, noise=noise, epsilon=epsilon)


def initial_slow_state(config: ExperimentConfig, spectrum: SpectrumSpec) -> SpectralField:
    k = np.arange(1, spectrum.m + 1, dtype=np.float64)
    settings = config.experiment
    return SpectralField(coeffs=settings.x0_amplitude * k ** (-settings.x0_decay), spectrum=spectrum)


def estimator_params(config: ExperimentConfig) -> EstimatorParams:
    settings = config.bbar
    return EstimatorParams(
        burn_in=settings.burn_in,
        window=settings.window,
        h_f=settings.h_f,
        n_chains=settings.n_chains,
        n_blocks=settings.n_blocks,
        seed=config.experiment.master_seed,
    )


def build_oracle(problem: Problem, config: ExperimentConfig) -> BbarOracle:
    kind = None if config.bbar.kind == "auto" else config.bbar.kind
    return BbarOracle.for_problem(problem, kind=kind, params=estimator_params(config))


def chunk_layout(n_samples: int, chunk_size: int) -> list[tuple[int, int]]:
    """(chunk index, chunk size) pairs; boundaries depend on chunk_size only, never on worker count."""
    return [(index, min(chunk_size, n_samples - start)) for index, start in enumerate(range(0, n_samples, chunk_size))]


def run_chunks(
    task: Callable[[int, int], ChunkResult],
    n_samples: int,
    runtime: RuntimeConfig,
    desc: str,
) -> list[ChunkResult]:
    layout = chunk_layout(n_samples, runtime.chunk_size)
    results: list[ChunkResult | None] = [None] * len(layout)
    with ThreadPoolExecutor(max_workers=runtime.resolved_threads) as pool:
        futures = {pool.submit(task, index, size): index for index, size in layout}
        for future in tqdm(as_completed(futures), total=len(futures), desc=desc, leave=False, disable=not runtime.progress):
            results[futures[future]] = future.result()
    return results


@dataclass(frozen=True)
class _PathChunk:
    values: np.ndarray
    aborted: int


@dataclass(frozen=True)
class RateExperimentResult:
    table: RateTable
    fit: RateFit | None
    reference_slope: float | None
    status: str
    message: str = ""
    # (larger eps, smaller eps) pairs where the error grew beyond 2 joint stderrs
    monotonicity_violations: tuple[tuple[float, float], ...] = ()

    @property
    def monotone(self) -> bool:
        return not self.monotonicity_violations


@dataclass(frozen=True)
class WeakStrongComparison:
    weak_slope: float | None
    strong_slope: float | None
    joint_slope_stderr: float
    n_stderr: float
    passed: bool


def compare_weak_strong(
    weak: RateExperimentResult,
    strong: RateExperimentResult,
    n_stderr: float = 2.0,
) -> WeakStrongComparison:
    """Weak slope must not fall below the strong slope by more than n_stderr joint slope stderrs."""
    if weak.fit is None or strong.fit is None:
        return WeakStrongComparison(
            weak_slope=weak.fit.slope if weak.fit else None,
            strong_slope=strong.fit.slope if strong.fit else None,
            joint_slope_stderr=float("nan"),
            n_stderr=n_stderr,
            passed=False,
        )
    joint = joint_stderr(weak.fit.slope_stderr, strong.fit.slope_stderr)
    return WeakStrongComparison(
        weak_slope=weak.fit.slope,
        strong_slope=strong.fit.slope,
        joint_slope_stderr=joint,
        n_stderr=n_stderr,
        passed=weak.fit.slope >= strong.fit.slope - n_stderr * joint,
    )


def _check_aborts(experiment: str, epsilon: float, aborted: int, n_samples: int) -> None:
    if aborted > ABORT_LIMIT * n_samples:
        raise ExperimentFailure(
            f"{experiment}: {aborted} of {n_samples} samples aborted at epsilon = {epsilon:g} (limit {ABORT_LIMIT:.0%})."
        )


def _coupled_paths(
    problem: Problem,
    oracle: BbarOracle,
    config: ExperimentConfig,
    stream: SeededStream,
    size: int,
    coupled: bool,
):
    settings = config.experiment
    x0 = initial_slow_state(config, problem.spectrum)
    y0 = SpectralField.zeros(problem.spectrum)
    noise = StreamNoisePath(spec=problem.noise, eigenvalues=problem.eigenvalues, stream=stream, epsilon=problem.epsilon)
    multiscale = simulate_multiscale(
        problem, x0, y0, settings.T, settings.h, noise, n_samples=size, c_sub=settings.c_sub, keep_fast=False
    )
    averaged_noise = noise if coupled else StreamNoisePath(
        spec=problem.noise,
        eigenvalues=problem.eigenvalues,
        stream=stream.child(UNCOUPLED_STREAM),
        epsilon=problem.epsilon,
    )
    averaged = simulate_averaged(problem, oracle, x0, settings.T, settings.h, averaged_noise, n_samples=size)
    keep = ~(multiscale.aborted | averaged.aborted)
    return multiscale.x[:, keep], averaged.x[:, keep], int(size - np.count_nonzero(keep))


def _fit_result(experiment: str, rows: list[RateRow], root_p: float, reference: float | None) -> RateExperimentResult:
    table = RateTable(experiment=experiment, rows=tuple(rows))
    try:
        fit = fit_loglog(table.rows, root_p=root_p)
    except FitError as exc:
        logger.warning("%s: rate fit rejected (%s)", experiment, exc)
        return RateExperimentResult(table=table, fit=None, reference_slope=reference, status=STATUS_FIT_REJECTED, message=str(exc))
    return RateExperimentResult(table=table, fit=fit, reference_slope=reference, status=STATUS_OK)


def strong_rate_experiment(
    config: ExperimentConfig,
    runtime: RuntimeConfig | None = None,
    coupled: bool | None = None,
) -> RateExperimentResult:
    """Max over the saved grid of E|X^eps_t - Xbar_t|^p per epsilon, on coupled slow noise."""
    runtime = runtime or load_runtime_config()
    settings = config.experiment
    use_coupling = settings.coupled if coupled is None else coupled
    experiment = "strong_rate" if use_coupling else "strong_rate_uncoupled"
    root = SeededStream(settings.master_seed).child(STRONG_STREAM)
    rows: list[RateRow] = []
    for epsilon in settings.epsilons:
        problem = build_problem(config, epsilon)
        oracle = build_oracle(problem, config)

        def task(chunk_index: int, size: int) -> _PathChunk:
            slow, averaged, aborted = _coupled_paths(problem, oracle, config, root.child(chunk_index), size, use_coupling)
            distances = np.linalg.norm(slow - averaged, axis=-1) ** settings.p
            return _PathChunk(values=distances.T, aborted=aborted)

        chunks = run_chunks(task, settings.mc_samples, runtime, desc=f"{experiment} eps={epsilon:g}")
        aborted = sum(chunk.aborted for chunk in chunks)
        _check_aborts(experiment, epsilon, aborted, settings.mc_samples)
        samples = np.concatenate([chunk.values for chunk in chunks], axis=0)
        means, stderrs = robust_mean(samples)
        worst = int(np.argmax(means))
        rows.append(
            RateRow(
                epsilon=float(epsilon),
                error=float(means[worst]),
                stderr=float(stderrs[worst]),
                n_effective=int(samples.shape[0]),
                aborted=aborted,
            )
        )
        logger.info("%s eps=%g error=%.6g stderr=%.3g", experiment, epsilon, means[worst], stderrs[worst])
    result = _fit_result(experiment, rows, settings.p, strong_reference_slope(config.noise.alpha))
    violations = tuple(monotonicity_violations(result.table))
    if violations and use_coupling:
        logger.warning("%s: error grows as epsilon shrinks at %s", experiment, violations)
    return replace(result, monotonicity_violations=violations)


def weak_test_function(config: ExperimentConfig) -> Callable[[np.ndarray], np.ndarray]:
    settings = config.experiment
    if settings.test_function == "cos":
        mode = settings.test_mode - 1
        return lambda x: np.cos(x[..., mode])
    if settings.test_function == "gaussian":
        return lambda x: np.exp(-0.5 * np.sum(x**2, axis=-1))
    if settings.test_function == "constant":
        return lambda x: np.ones(x.shape[:-1])
    raise ValueError(f"Unknown test function '{settings.test_function}'.")


def weak_rate_experiment(config: ExperimentConfig, runtime: RuntimeConfig | None = None) -> RateExperimentResult:
    """Max over the saved grid of |E phi(X^eps_t) - E phi(Xbar_t)|, coupled paths as control variates."""
    runtime = runtime or load_runtime_config()
    settings = config.experiment
    phi = weak_test_function(config)
    root = SeededStream(settings.master_seed).child(WEAK_STREAM)
    rows: list[RateRow] = []
    for epsilon in settings.epsilons:
        problem = build_problem(config, epsilon)
        if not problem.coeffs.bounded:
            logger.warning("weak_rate: slow drift '%s' is unbounded; the weak rate assumes sup|B| < inf", problem.coeffs.name)
        oracle = build_oracle(problem, config)

        def task(chunk_index: int, size: int) -> _PathChunk:
            slow, averaged, aborted = _coupled_paths(problem, oracle, config, root.child(chunk_index), size, settings.coupled)
            return _PathChunk(values=(phi(slow) - phi(averaged)).T, aborted=aborted)

        chunks = run_chunks(task, settings.mc_samples, runtime, desc=f"weak_rate eps={epsilon:g}")
        aborted = sum(chunk.aborted for chunk in chunks)
        _check_aborts("weak_rate", epsilon, aborted, settings.mc_samples)
        samples = np.concatenate([chunk.values for chunk in chunks], axis=0)
        means, stderrs = block_statistics(samples, robust=False)
        gaps = np.abs(means)
        worst = int(np.argmax(gaps))
        rows.append(
            RateRow(
                epsilon=float(epsilon),
                error=float(gaps[worst]),
                stderr=float(stderrs[worst]),
                n_effective=int(samples.shape[0]),
                aborted=aborted,
            )
        )
    return _fit_result("weak_rate", rows, 1.0, None)


@dataclass(frozen=True)
class GalerkinRow:
    m: int
    error: float
    stderr: float
    n_effective: int
    aborted: int


@dataclass(frozen=True)
class GalerkinResult:
    rows: tuple[GalerkinRow, ...]
    reference_m: int
    strictly_decreasing: bool
    status: str


def galerkin_convergence_experiment(config: ExperimentConfig, runtime: RuntimeConfig | None = None) -> GalerkinResult:
    """E|X^{m,eps}_T - X^{m*,eps}_T| over the m ladder, low modes sharing noise with the reference run."""
    runtime = runtime or load_runtime_config()
    settings = config.galerkin
    ladder = tuple(settings.m_ladder) + (settings.m_reference,)
    problems = {m: build_problem(config, settings.epsilon, m=m, coefficients=settings.coefficients) for m in ladder}
    reference_spectrum = problems[settings.m_reference].spectrum
    root = SeededStream(config.experiment.master_seed).child(GALERKIN_STREAM)
    T = config.experiment.T

    def task(chunk_index: int, size: int) -> _PathChunk:
        stream = root.child(chunk_index)
        finals = {}
        aborted = np.zeros(size, dtype=bool)
        for m, problem in problems.items():
            noise = StreamNoisePath(spec=problem.noise, eigenvalues=problem.eigenvalues, stream=stream, epsilon=problem.epsilon)
            trajectory = simulate_multiscale(
                problem,
                initial_slow_state(config, problem.spectrum),
                SpectralField.zeros(problem.spectrum),
                T,
                settings.h,
                noise,
                n_samples=size,
                c_sub=config.experiment.c_sub,
                keep_fast=False,
            )
            aborted |= trajectory.aborted
            finals[m] = embed(trajectory.slow_field(-1), reference_spectrum).coeffs
        keep = ~aborted
        reference = finals[settings.m_reference][keep]
        errors = np.stack([np.linalg.norm(finals[m][keep] - reference, axis=-1) for m in ladder], axis=-1)
        return _PathChunk(values=errors, aborted=int(size - np.count_nonzero(keep)))

    chunks = run_chunks(task, settings.mc_samples, runtime, desc="galerkin")
    aborted = sum(chunk.aborted for chunk in chunks)
    _check_aborts("galerkin", settings.epsilon, aborted, settings.mc_samples)
    samples = np.concatenate([chunk.values for chunk in chunks], axis=0)
    means, stderrs = block_statistics(samples, robust=True)
    rows = tuple(
        GalerkinRow(m=m, error=float(means[i]), stderr=float(stderrs[i]), n_effective=int(samples.shape[0]), aborted=aborted)
        for i, m in enumerate(ladder)
    )
    decreasing = all(
        coarse.error - fine.error > joint_stderr(coarse.stderr, fine.stderr)
        for coarse, fine in zip(rows[:-2], rows[1:-1])
    )
    return GalerkinResult(
        rows=rows,
        reference_m=settings.m_reference,
        strictly_decreasing=decreasing,
        status=STATUS_OK if decreasing else STATUS_NON_MONOTONE,
    )


def ergodicity_experiment(config: ExperimentConfig) -> ErgodicityReport:
    settings = config.ergodicity
    problem = build_problem(config, epsilon=1.0)
    x = SpectralField.basis(problem.spectrum, 1, settings.x_amplitude)
    y = SpectralField.basis(problem.spectrum, 1, settings.y_amplitude)
    try:
        functional = FUNCTIONALS[settings.functional]()
    except KeyError as exc:
        raise ValueError(f"Unknown functional '{settings.functional}'. Known: {sorted(FUNCTIONALS)}") from exc
    return measure_ergodic_decay(functional, x, y, settings.times, settings.mc_samples, problem, estimator_params(config))


@dataclass(frozen=True)
class ContractionReport:
    n_pairs: int
    n_steps: int
    violations: int
    max_ratio: float
    rate: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def contraction_check(
    problem: Problem,
    n_pairs: int = 100,
    T: float = 1.0,
    h_f: float = 0.01,
    seed: int = 0,
    slack: float = 1e-9,
) -> ContractionReport:
    """Frozen runs from (x, y1) and (x, y2) on identical noise: |Y1 - Y2| <= e^{-(lambda_1 - L_F) t / 2}|y1 - y2|."""
    stream = SeededStream(seed).child(CONTRACTION_STREAM)
    generator = stream.child(0).generator()
    shape = (n_pairs, problem.m)
    x = generator.standard_normal(shape)
    y1 = 3.0 * generator.standard_normal(shape)
    y2 = 3.0 * generator.standard_normal(shape)
    noise = StreamNoisePath(spec=problem.noise, eigenvalues=problem.eigenvalues, stream=stream.child(1))
    n_steps = int(round(T / h_f))
    rate = problem.dissipativity_gap / 2.0
    initial = np.linalg.norm(y1 - y2, axis=-1)
    violations = 0
    max_ratio = 0.0
    paths = zip(
        iterate_frozen(problem, x, y1, n_steps, h_f, noise),
        iterate_frozen(problem, x, y2, n_steps, h_f, noise),
    )
    for (step_index, first, _), (_, second, _) in paths:
        bound = np.exp(-rate * step_index * h_f) * initial
        distance = np.linalg.norm(first - second, axis=-1)
        violations += int(np.count_nonzero(distance > bound + slack))
        max_ratio = max(max_ratio, float(np.max(distance / bound)))
    return ContractionReport(n_pairs=n_pairs, n_steps=n_steps, violations=violations, max_ratio=max_ratio, rate=rate)


@dataclass(frozen=True)
class MomentPoint:
    x_norm: float
    y_norm: float
    t: float
    mean: float
    stderr: float
    bound: float


@dataclass(frozen=True)
class MomentBoundReport:
    calibrated_c: float
    points: tuple[MomentPoint, ...]
    violations: int

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _frozen_norm_means(problem, x_norm, y_norm, times, n_samples, h_f, stream):
    x = np.zeros((n_samples, problem.m))
    y = np.zeros((n_samples, problem.m))
    x[:, 0] = x_norm
    y[:, 0] = y_norm
    indices = {int(round(t / h_f)): position for position, t in enumerate(times)}
    noise = StreamNoisePath(spec=problem.noise, eigenvalues=problem.eigenvalues, stream=stream)
    results = [None] * len(times)
    for step_index, state, aborted in iterate_frozen(problem, x, y, max(indices), h_f, noise):
        position = indices.get(step_index)
        if position is not None:
            results[position] = robust_mean(np.linalg.norm(state[~aborted], axis=-1))
    return results


def moment_bound_check(
    problem: Problem,
    x_norms,
    y_norms,
    times,
    n_samples: int = 2000,
    h_f: float = 0.01,
    seed: int = 0,
    n_stderr: float = 2.0,
) -> MomentBoundReport:
    """E|Y_t| <= e^{-lambda_1 t}|y| + C(1 + |x|); C is the upper confidence bound of E|Y| at (x, y) = (0, 0) and the latest time."""
    stream = SeededStream(seed).child(MOMENT_STREAM)
    times = tuple(float(t) for t in times)
    calibration = _frozen_norm_means(problem, 0.0, 0.0, (times[-1],), n_samples, h_f, stream.child(0))[0]
    calibrated_c = float(calibration[0] + n_stderr * calibration[1])
    points: list[MomentPoint] = []
    violations = 0
    for i, x_norm in enumerate(x_norms):
        for j, y_norm in enumerate(y_norms):
            means = _frozen_norm_means(problem, x_norm, y_norm, times, n_samples, h_f, stream.child(1, i, j))
            for t, (mean, stderr) in zip(times, means):
                bound = np.exp(-problem.spectrum.lambda_1 * t) * y_norm + calibrated_c * (1.0 + x_norm)
                if mean > bound + n_stderr * stderr:
                    violations += 1
                points.append(MomentPoint(float(x_norm), float(y_norm), t, float(mean), float(stderr), float(bound)))
    return MomentBoundReport(calibrated_c=calibrated_c, points=tuple(points), violations=violations)


@dataclass(frozen=True)
class NoiseCheckRow:
    alpha: float
    source: str
    u: float
    observed: float
    expected: float
    stderr: float
    z_score: float
    passed: bool


def noise_check(
    alphas=(1.2, 1.5, 1.8),
    u_points=(0.5, 1.0, 2.0),
    n_samples: int = 100_000,
    seed: int = 0,
    n_stderr: float = 3.0,
) -> list[NoiseCheckRow]:
    """Empirical CFs of the standard sampler and of a slow convolution increment against exp(-|scale u|^alpha)."""
    stream = SeededStream(seed).child(NOISE_CHECK_STREAM)
    eigenvalues = np.array([np.pi**2])
    h = 0.1
    rows: list[NoiseCheckRow] = []
    for index, alpha in enumerate(alphas):
        standard = sample_standard_stable(alpha, stream.child(index, 0), n_samples)
        spec = StableNoiseSpec(alpha=alpha, slow_weights=np.ones(1), fast_weights=np.ones(1))
        increments = convolution_increment_block(spec, eigenvalues, h, ROLE_SLOW, stream.child(index, 1), n_samples)[:, 0]
        scale = float(convolution_increment_scale(eigenvalues[0], h, 1.0, alpha))
        for source, samples, source_scale in (("standard", standard, 1.0), ("convolution", increments, scale)):
            for check in check_stable_cf(samples, alpha, source_scale, u_points, n_stderr=n_stderr):
                rows.append(
                    NoiseCheckRow(
                        alpha=float(alpha),
                        source=source,
                        u=check.u,
                        observed=check.observed,
                        expected=check.expected,
                        stderr=check.stderr,
                        z_score=check.z_score,
                        passed=check.passed,
                    )
                )
    return rows


@dataclass(frozen=True)
class EstimatorCheckRow:
    mode: int
    estimate: float
    stderr: float
    analytic: float
    z_score: float


@dataclass(frozen=True)
class EstimatorCheckReport:
    name: str
    rows: tuple[EstimatorCheckRow, ...]
    status: str
    passed: bool
    max_stderr: float


def _check_rows(estimate: np.ndarray, stderr: np.ndarray, analytic: np.ndarray) -> tuple[EstimatorCheckRow, ...]:
    safe = np.maximum(stderr, 1e-15)
    return tuple(
        EstimatorCheckRow(
            mode=k + 1,
            estimate=float(estimate[k]),
            stderr=float(stderr[k]),
            analytic=float(analytic[k]),
            z_score=float((estimate[k] - analytic[k]) / safe[k]),
        )
        for k in range(estimate.size)
    )


def bbar_check(config: ExperimentConfig, max_stderr: float = 1e-2, n_stderr: float = 3.0) -> EstimatorCheckReport:
    """Ergodic B-bar at e_1 against the linear benchmark's closed form."""
    problem = build_problem(config, epsilon=1.0, coefficients=COEFFICIENTS_LINEAR)
    x = SpectralField.basis(problem.spectrum, 1)
    kind = "ergodic" if config.bbar.kind in {"auto", BBAR_ANALYTIC} else config.bbar.kind
    estimate = estimate_bbar(x, problem, estimator_params(config), kind=kind)
    analytic = problem.coeffs.analytic_bbar(x.coeffs)
    rows = _check_rows(estimate.value.coeffs, estimate.stderr, analytic)
    within = all(abs(row.estimate - row.analytic) <= n_stderr * row.stderr + 1e-12 for row in rows)
    worst = float(np.max(estimate.stderr))
    return EstimatorCheckReport(
        name="bbar_check",
        rows=rows,
        status=estimate.status,
        passed=within and worst <= max_stderr,
        max_stderr=worst,
    )


def phi_check(config: ExperimentConfig, n_samples: int = 2000, n_stderr: float = 3.0) -> EstimatorCheckReport:
    """Quadrature corrector at x = 0, y = e_1 against the linear benchmark's closed form."""
    problem = build_problem(config, epsilon=1.0, coefficients=COEFFICIENTS_LINEAR)
    x = SpectralField.zeros(problem.spectrum)
    y = SpectralField.basis(problem.spectrum, 1)
    oracle = BbarOracle.for_problem(problem, kind=BBAR_ANALYTIC)
    h_f = config.bbar.h_f
    estimate = estimate_phi(x, y, problem, oracle, n_samples=n_samples, h_f=h_f, seed=config.experiment.master_seed)
    analytic = linear_benchmark_phi(problem, x, y).coeffs
    rows = _check_rows(estimate.value.coeffs, estimate.stderr, analytic)
    # first-order trapezoid bias of the discrete mean relaxation
    bias = h_f * problem.spectrum.lambda_1 * np.abs(analytic) / 4.0 + estimate.truncation_bound
    within = all(
        abs(row.estimate - row.analytic) <= n_stderr * row.stderr + bias[row.mode - 1] + 1e-12 for row in rows
    )
    return EstimatorCheckReport(
        name="phi_check",
        rows=rows,
        status=estimate.status,
        passed=within,
        max_stderr=float(np.max(estimate.stderr)),
    )
