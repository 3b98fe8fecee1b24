from __future__ import annotations

import numpy as np
import pytest

from stable_averaging.dynamics import (
    CoarsenedNoisePath,
    CoefficientPair,
    Problem,
    RecordingNoisePath,
    SlowFastState,
    StreamNoisePath,
    exact_averaged_linear_flow,
    exact_linear_flow,
    linear_benchmark,
    nemytskii_coefficients,
    resolve_point_function,
    simulate_averaged,
    simulate_frozen,
    simulate_multiscale,
    spot_check_lipschitz,
    step_count,
    step_multiscale,
    substep_count,
)
from stable_averaging.errors import AssumptionError
from stable_averaging.spectral import SpectralField, SpectrumSpec
from stable_averaging.stable_noise import ROLE_FAST, ROLE_SLOW, PowerDecay, SeededStream, StableNoiseSpec


def make_problem(m: int = 3, epsilon: float = 0.1, alpha: float = 1.75, silent: bool = False, coeffs=None) -> Problem:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(m)
    noise = StableNoiseSpec.power_law(alpha, m, PowerDecay(2.0, 1.0))
    if silent:
        noise = noise.silenced()
    return Problem(spectrum=spectrum, coeffs=coeffs or linear_benchmark(spectrum), noise=noise, epsilon=epsilon)


def test_dissipativity_is_enforced() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(2)
    noise = StableNoiseSpec.power_law(1.5, 2, PowerDecay(2.0, 1.0))
    with pytest.raises(AssumptionError):
        Problem(spectrum=spectrum, coeffs=linear_benchmark(spectrum, b=10.0), noise=noise, epsilon=0.1)
    with pytest.raises(ValueError):
        Problem(spectrum=spectrum, coeffs=linear_benchmark(spectrum), noise=noise, epsilon=0.0)


def test_problem_reports_gap_and_a2() -> None:
    problem = make_problem()
    assert problem.dissipativity_gap == pytest.approx(np.pi**2 - 1.0)
    assert problem.a2_report.passed
    assert problem.with_epsilon(0.5).epsilon == 0.5


def test_linear_benchmark_drifts() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(2)
    coeffs = linear_benchmark(spectrum, a=2.0, b=1.0, b0=0.5, b1=3.0)
    x = SpectralField(coeffs=np.array([1.0, -1.0]), spectrum=spectrum)
    y = SpectralField(coeffs=np.array([0.5, 2.0]), spectrum=spectrum)
    np.testing.assert_allclose(coeffs.B(x, y).coeffs, [0.5 + 1.5, -0.5 + 6.0])
    np.testing.assert_allclose(coeffs.F(x, y).coeffs, [2.0 - 0.5, -2.0 - 2.0])
    np.testing.assert_allclose(coeffs.analytic_bbar(x.coeffs), 0.5 * x.coeffs + 6.0 * x.coeffs / (spectrum.eigenvalues + 1.0))
    assert not coeffs.bounded


@pytest.mark.parametrize("b_name,f_name", [("tanh_sum", "sin_damped"), ("sin_tanh", "odd_tanh")])
def test_lipschitz_spot_check(b_name: str, f_name: str) -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(6)
    coeffs = nemytskii_coefficients(spectrum, resolve_point_function(b_name), resolve_point_function(f_name))
    report = spot_check_lipschitz(coeffs, SeededStream(11), n_pairs=300, scale=2.0)
    assert report.passed, report
    assert coeffs.bounded


def test_linear_spot_check() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(4)
    assert spot_check_lipschitz(linear_benchmark(spectrum), SeededStream(3)).passed


def test_unknown_point_function() -> None:
    with pytest.raises(ValueError):
        resolve_point_function("relu")


def test_step_and_substep_counts() -> None:
    assert step_count(1.0, 2.0**-9) == 512
    with pytest.raises(ValueError):
        step_count(1.0, 0.3)
    assert substep_count(2.0**-9, 2.0**-9) == 16
    assert substep_count(2.0**-9, 2.0**-9, c_sub=0.5) == 2
    assert substep_count(0.5 * 0.01, 0.01) == 8
    assert substep_count(0.5 * 0.01, 0.01, c_sub=0.5) == 1
    assert substep_count(1e-3, 1.0) == 1


def test_noise_free_multiscale_matches_matrix_exponential() -> None:
    problem = make_problem(m=2, epsilon=0.1, silent=True)
    x0 = SpectralField(coeffs=np.array([1.0, 0.5]), spectrum=problem.spectrum)
    y0 = SpectralField(coeffs=np.array([0.2, -0.3]), spectrum=problem.spectrum)
    trajectory = simulate_multiscale(problem, x0, y0, 0.25, 1e-3, SeededStream(0))
    exact = exact_linear_flow(problem, x0, y0, 0.25)
    np.testing.assert_allclose(trajectory.x[-1, 0], exact.x.coeffs, atol=2e-3)
    np.testing.assert_allclose(trajectory.y[-1, 0], exact.y.coeffs, atol=2e-3)


def test_noise_free_averaged_matches_closed_form() -> None:
    problem = make_problem(m=3, silent=True)
    x0 = SpectralField(coeffs=np.array([1.0, 0.25, 0.1]), spectrum=problem.spectrum)
    trajectory = simulate_averaged(problem, problem.coeffs.analytic_bbar, x0, 0.5, 1e-3, SeededStream(0))
    exact = exact_averaged_linear_flow(problem, x0, 0.5)
    np.testing.assert_allclose(trajectory.x[-1, 0], exact.coeffs, rtol=1e-2, atol=1e-6)


def test_noise_free_slow_component_approaches_averaged_flow() -> None:
    problem = make_problem(m=2, epsilon=1e-3, silent=True)
    x0 = SpectralField(coeffs=np.array([1.0, 0.5]), spectrum=problem.spectrum)
    trajectory = simulate_multiscale(problem, x0, SpectralField.zeros(problem.spectrum), 0.2, 1e-3, SeededStream(0))
    averaged = exact_averaged_linear_flow(problem, x0, 0.2)
    np.testing.assert_allclose(trajectory.x[-1, 0], averaged.coeffs, atol=2e-2)


def test_simulation_is_reproducible() -> None:
    problem = make_problem()
    x0 = SpectralField.basis(problem.spectrum, 1)
    y0 = SpectralField.zeros(problem.spectrum)
    first = simulate_multiscale(problem, x0, y0, 0.1, 0.01, SeededStream(7), n_samples=16)
    second = simulate_multiscale(problem, x0, y0, 0.1, 0.01, SeededStream(7), n_samples=16)
    np.testing.assert_array_equal(first.x, second.x)
    np.testing.assert_array_equal(first.y, second.y)
    assert first.x.shape == (11, 16, 3)
    assert first.final_state().t == pytest.approx(0.1)


def test_step_multiscale_matches_one_simulated_step() -> None:
    problem = make_problem()
    x0 = SpectralField.basis(problem.spectrum, 1)
    y0 = SpectralField.zeros(problem.spectrum)
    state = step_multiscale(problem, SlowFastState(x0, y0), 0.01, SeededStream(4))
    trajectory = simulate_multiscale(problem, x0, y0, 0.01, 0.01, SeededStream(4))
    np.testing.assert_allclose(state.x.coeffs, trajectory.x[-1, 0])
    np.testing.assert_allclose(state.y.coeffs, trajectory.y[-1, 0])
    assert state.t == pytest.approx(0.01)


def test_galerkin_truncations_share_low_mode_noise() -> None:
    wide = make_problem(m=6)
    narrow = make_problem(m=2)
    stream = SeededStream(21)
    wide_noise = StreamNoisePath(wide.noise, wide.eigenvalues, stream, epsilon=0.1)
    narrow_noise = StreamNoisePath(narrow.noise, narrow.eigenvalues, stream, epsilon=0.1)
    for role in (ROLE_SLOW, ROLE_FAST):
        np.testing.assert_allclose(
            wide_noise.increment(role, 5, 0.01, 8)[:, :2],
            narrow_noise.increment(role, 5, 0.01, 8),
        )


def test_averaged_run_reuses_slow_addresses() -> None:
    problem = make_problem(epsilon=0.01)
    x0 = SpectralField.basis(problem.spectrum, 1)
    multiscale_path = RecordingNoisePath(StreamNoisePath(problem.noise, problem.eigenvalues, SeededStream(1), 0.01))
    averaged_path = RecordingNoisePath(StreamNoisePath(problem.noise, problem.eigenvalues, SeededStream(1), 0.01))
    simulate_multiscale(problem, x0, SpectralField.zeros(problem.spectrum), 0.05, 0.01, multiscale_path, n_samples=4)
    simulate_averaged(problem, problem.coeffs.analytic_bbar, x0, 0.05, 0.01, averaged_path, n_samples=4)
    assert multiscale_path.addresses(ROLE_SLOW) == averaged_path.addresses(ROLE_SLOW)
    fast = multiscale_path.addresses(ROLE_FAST)
    assert [index for index, _ in fast] == list(range(5 * 16))
    assert averaged_path.addresses(ROLE_FAST) == []


def test_coarsened_path_composes_fine_increments() -> None:
    problem = make_problem()
    recorder = RecordingNoisePath(StreamNoisePath(problem.noise, problem.eigenvalues, SeededStream(2), 0.1))
    coarse = CoarsenedNoisePath(recorder, problem.eigenvalues, epsilon=0.1, slow_factor=2)
    increment = coarse.increment(ROLE_SLOW, 3, 0.02, 5)
    assert recorder.addresses(ROLE_SLOW) == [(6, 0.01), (7, 0.01)]
    fine = StreamNoisePath(problem.noise, problem.eigenvalues, SeededStream(2), 0.1)
    expected = np.exp(-problem.eigenvalues * 0.01) * fine.increment(ROLE_SLOW, 6, 0.01, 5) + fine.increment(
        ROLE_SLOW, 7, 0.01, 5
    )
    np.testing.assert_allclose(increment, expected)


def _exploding_problem() -> Problem:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(2)

    def slow_drift(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.where(x[..., :1] > 0.5, np.inf, 0.0) * np.ones_like(x)

    coeffs = CoefficientPair(
        name="exploding",
        m=2,
        slow_drift=slow_drift,
        fast_drift=lambda x, y: np.zeros_like(y),
        lip_B=1.0,
        lip_F_x=0.0,
        lip_F_y=0.0,
    )
    return make_problem(m=2, silent=True, coeffs=coeffs)


def test_non_finite_samples_are_quarantined() -> None:
    problem = _exploding_problem()
    x0 = SpectralField(coeffs=np.array([[1.0, 0.0], [0.1, 0.0], [0.2, 0.0]]), spectrum=problem.spectrum)
    y0 = SpectralField.zeros(problem.spectrum, (3,))
    trajectory = simulate_multiscale(problem, x0, y0, 0.03, 0.01, SeededStream(0))
    assert trajectory.aborted_count == 1
    assert trajectory.aborted.tolist() == [True, False, False]
    np.testing.assert_array_equal(trajectory.x[-1, 0], [0.0, 0.0])
    assert np.all(trajectory.x[-1, 1:, 0] > 0.0)


def test_single_step_raises_on_non_finite_state() -> None:
    problem = _exploding_problem()
    state = SlowFastState(SpectralField.basis(problem.spectrum, 1), SpectralField.zeros(problem.spectrum))
    with pytest.raises(FloatingPointError):
        step_multiscale(problem, state, 0.01, SeededStream(0))


def test_frozen_run_keeps_slow_state_fixed() -> None:
    problem = make_problem(silent=True)
    x = SpectralField.basis(problem.spectrum, 1, 2.0)
    trajectory = simulate_frozen(problem, x, SpectralField.zeros(problem.spectrum), 5.0, 0.01, SeededStream(0))
    # relaxes to the stationary mean a x / (lambda + b)
    expected = 2.0 / (problem.spectrum.lambda_1 + 1.0)
    assert trajectory.x[-1, 0, 0] == pytest.approx(expected, rel=1e-6)
    with pytest.raises(ValueError):
        trajectory.fast_field(0)


def test_slow_step_averages_drift_over_fast_substeps() -> None:
    problem = make_problem(m=2, epsilon=1e-4, silent=True)
    x0 = SpectralField(coeffs=np.array([1.0, 0.5]), spectrum=problem.spectrum)
    h = 0.01
    state = step_multiscale(problem, SlowFastState(x0, SpectralField.zeros(problem.spectrum)), h, SeededStream(0))
    eigenvalues = problem.eigenvalues
    decay = np.exp(-eigenvalues * h)
    gain = -np.expm1(-eigenvalues * h) / eigenvalues
    expected = decay * x0.coeffs + gain * problem.coeffs.analytic_bbar(x0.coeffs)
    np.testing.assert_allclose(state.x.coeffs, expected, atol=2e-5)
    np.testing.assert_allclose(state.y.coeffs, x0.coeffs / (eigenvalues + 1.0), atol=1e-10)
    # B frozen at y0 = 0 would drop the b1 m(x) part of the average
    frozen_at_start = decay * x0.coeffs + gain * 0.5 * x0.coeffs
    assert np.all(np.abs(state.x.coeffs - frozen_at_start) > 5e-5)


def test_one_step_defect_quarters_when_step_halves() -> None:
    problem = make_problem(m=2, epsilon=1.0, silent=True)
    x0 = SpectralField(coeffs=np.array([1.0, 0.5]), spectrum=problem.spectrum)
    y0 = SpectralField(coeffs=np.array([0.2, -0.3]), spectrum=problem.spectrum)

    def defect(h: float) -> float:
        state = step_multiscale(problem, SlowFastState(x0, y0), h, SeededStream(0))
        exact = exact_linear_flow(problem, x0, y0, h)
        return float(np.linalg.norm(state.x.coeffs - exact.x.coeffs) + np.linalg.norm(state.y.coeffs - exact.y.coeffs))

    assert 3.2 <= defect(4e-3) / defect(2e-3) <= 4.8


def test_halving_the_step_halves_the_pathwise_error() -> None:
    problem = make_problem(m=2, epsilon=1.0)
    x0 = SpectralField(coeffs=np.array([1.0, 0.5]), spectrum=problem.spectrum)
    y0 = SpectralField.zeros(problem.spectrum)
    fine = StreamNoisePath(problem.noise, problem.eigenvalues, SeededStream(17), epsilon=1.0)
    finals = []
    for factor in (4, 2, 1):
        path = fine
        if factor > 1:
            path = CoarsenedNoisePath(fine, problem.eigenvalues, epsilon=1.0, slow_factor=factor, fast_factor=factor)
        trajectory = simulate_multiscale(problem, x0, y0, 0.25, factor * 2.0**-7, path, n_samples=2000, keep_fast=False)
        finals.append(trajectory.x[-1])
    coarse_gap = np.median(np.linalg.norm(finals[0] - finals[1], axis=-1))
    fine_gap = np.median(np.linalg.norm(finals[1] - finals[2], axis=-1))
    assert 1.5 <= coarse_gap / fine_gap <= 3.0


def test_slow_moment_is_bounded_uniformly_in_epsilon() -> None:
    sups = []
    for epsilon in (1.0, 0.1, 0.01):
        problem = make_problem(m=3, epsilon=epsilon)
        x0 = SpectralField.basis(problem.spectrum, 1)
        trajectory = simulate_multiscale(
            problem, x0, SpectralField.zeros(problem.spectrum), 0.5, 0.01, SeededStream(31), n_samples=500, keep_fast=False
        )
        sups.append(float(np.linalg.norm(trajectory.x, axis=-1).mean(axis=1).max()))
    assert max(sups) <= 1.5 * min(sups)
    assert max(sups) <= 2.0


def test_nemytskii_drift_is_bounded_by_the_point_supremum() -> None:
    spectrum = SpectrumSpec.dirichlet_laplacian_1d(6)
    coeffs = nemytskii_coefficients(spectrum, resolve_point_function("sin_damped"), resolve_point_function("odd_tanh"))
    generator = SeededStream(12).generator()
    x, y = (5.0 * generator.standard_normal((400, 6)) for _ in range(2))
    drift = coeffs.slow_drift(x, y)
    assert coeffs.sup_B == pytest.approx(1.5)
    assert np.all(np.abs(drift) <= np.sqrt(2.0) * coeffs.sup_B + 1e-12)
    # discrete Parseval over the sine grid
    assert np.all(np.linalg.norm(drift, axis=-1) <= coeffs.sup_B + 1e-12)
