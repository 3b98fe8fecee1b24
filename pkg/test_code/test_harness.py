from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from stable_averaging.config import ExperimentConfig, RuntimeConfig, load_experiment_config
from stable_averaging.errors import AssumptionError
from stable_averaging.harness import (
    STATUS_FIT_REJECTED,
    RateExperimentResult,
    bbar_check,
    build_oracle,
    build_problem,
    chunk_layout,
    compare_weak_strong,
    contraction_check,
    galerkin_convergence_experiment,
    initial_slow_state,
    moment_bound_check,
    noise_check,
    phi_check,
    run_chunks,
    strong_rate_experiment,
    weak_rate_experiment,
    weak_test_function,
)
from stable_averaging.rates import RateFit, RateTable, strong_reference_slope


SMALL_LADDER = [
    "problem.m=2",
    "experiment.epsilons=0.25,0.125,0.0625",
    "experiment.mc_samples=64",
    "experiment.h=0.015625",
    "experiment.T=0.25",
]


def runtime(threads: int = 1, chunk_size: int = 32) -> RuntimeConfig:
    return RuntimeConfig(
        project_dir=Path("."),
        output_dir=Path("."),
        db_path=Path("results.db"),
        threads=threads,
        chunk_size=chunk_size,
        progress=False,
        db_logging=False,
    )


def test_chunk_layout() -> None:
    assert chunk_layout(1000, 250) == [(0, 250), (1, 250), (2, 250), (3, 250)]
    assert chunk_layout(10, 4) == [(0, 4), (1, 4), (2, 2)]


def test_run_chunks_keeps_chunk_order() -> None:
    results = run_chunks(lambda index, size: (index, size), 10, runtime(threads=3, chunk_size=4), desc="order")
    assert results == [(0, 4), (1, 4), (2, 2)]


def test_build_problem_from_config() -> None:
    config = ExperimentConfig()
    problem = build_problem(config, 0.01)
    assert problem.m == 8
    assert problem.epsilon == 0.01
    assert problem.noise.alpha == 1.75
    assert problem.coeffs.name == "linear"
    galerkin = build_problem(config, 0.1, m=4, coefficients="nemytskii")
    assert galerkin.m == 4
    assert galerkin.coeffs.bounded
    x0 = initial_slow_state(config, problem.spectrum)
    np.testing.assert_allclose(x0.coeffs, np.arange(1, 9, dtype=np.float64) ** -2.0)
    assert build_oracle(problem, config).kind == "analytic"


def test_build_problem_rejects_non_dissipative_config() -> None:
    config = load_experiment_config(None, ["problem.b=12"])
    with pytest.raises(AssumptionError):
        build_problem(config, 0.1)


def test_strong_rate_is_independent_of_thread_count() -> None:
    config = load_experiment_config(None, SMALL_LADDER)
    serial = strong_rate_experiment(config, runtime(threads=1))
    parallel = strong_rate_experiment(config, runtime(threads=3))
    assert serial.table == parallel.table
    assert [row.epsilon for row in serial.table.rows] == [0.25, 0.125, 0.0625]
    assert all(row.n_effective + row.aborted == 64 for row in serial.table.rows)
    assert serial.reference_slope == pytest.approx(strong_reference_slope(1.75))
    assert serial.table.experiment == "strong_rate"
    assert serial.monotone
    assert serial.monotonicity_violations == ()


def test_uncoupled_strong_rate_is_labelled_and_stays_above_coupled() -> None:
    config = load_experiment_config(None, SMALL_LADDER)
    result = strong_rate_experiment(config, runtime(), coupled=False)
    assert result.table.experiment == "strong_rate_uncoupled"
    assert all(row.error > 0.0 for row in result.table.rows)
    coupled = strong_rate_experiment(config, runtime())
    assert result.table.row_for(0.0625).error > coupled.table.row_for(0.0625).error


def test_weak_rate_with_constant_test_function_has_nothing_to_fit() -> None:
    config = load_experiment_config(None, SMALL_LADDER + ["experiment.test_function=constant"])
    result = weak_rate_experiment(config, runtime())
    assert all(row.error == 0.0 for row in result.table.rows)
    assert result.status == STATUS_FIT_REJECTED
    assert result.fit is None
    assert "noise floor" in result.message


def test_weak_test_functions() -> None:
    x = np.array([[0.0, 1.0], [np.pi, 0.0]])
    cos_first = weak_test_function(ExperimentConfig())
    np.testing.assert_allclose(cos_first(x), [1.0, -1.0])
    gaussian = weak_test_function(load_experiment_config(None, ["experiment.test_function=gaussian"]))
    np.testing.assert_allclose(gaussian(x), [np.exp(-0.5), np.exp(-0.5 * np.pi**2)])


def test_galerkin_rows_include_reference() -> None:
    config = load_experiment_config(
        None,
        [
            "experiment.T=0.25",
            "galerkin.m_ladder=2,4",
            "galerkin.m_reference=8",
            "galerkin.mc_samples=64",
            "galerkin.h=0.015625",
            "galerkin.epsilon=0.25",
        ],
    )
    result = galerkin_convergence_experiment(config, runtime(threads=2))
    assert [row.m for row in result.rows] == [2, 4, 8]
    assert result.reference_m == 8
    assert result.rows[-1].error == 0.0
    assert all(row.error >= 0.0 for row in result.rows)
    assert result.strictly_decreasing
    assert result.status == "ok"


def test_frozen_contraction_holds() -> None:
    config = ExperimentConfig()
    for family in ("linear", "nemytskii"):
        report = contraction_check(build_problem(config, 1.0, coefficients=family), n_pairs=20, T=0.5)
        assert report.passed, report
        assert report.n_steps == 50
        assert report.max_ratio <= 1.0 + 1e-9


def test_moment_bound_check() -> None:
    problem = build_problem(ExperimentConfig(), 1.0, m=4)
    report = moment_bound_check(problem, (1.0,), (0.0, 3.0), (0.1, 0.2), n_samples=256)
    assert report.calibrated_c > 0.0
    assert len(report.points) == 4
    assert report.passed


def test_noise_check_rows() -> None:
    rows = noise_check(alphas=(1.5,), u_points=(0.5, 1.0), n_samples=20_000, seed=1, n_stderr=5.0)
    assert len(rows) == 4
    assert {row.source for row in rows} == {"standard", "convolution"}
    assert all(row.passed for row in rows)


def test_bbar_check_agrees_with_closed_form() -> None:
    config = load_experiment_config(None, ["problem.m=4"])
    report = bbar_check(config)
    assert report.name == "bbar_check"
    assert len(report.rows) == 4
    assert all(abs(row.z_score) <= 5.0 for row in report.rows)
    assert report.rows[0].analytic == pytest.approx(0.5 + 1.0 / (np.pi**2 + 1.0))


def test_phi_check_reports_every_mode() -> None:
    report = phi_check(load_experiment_config(None, ["problem.m=3"]))
    assert [row.mode for row in report.rows] == [1, 2, 3]
    assert report.rows[0].analytic == pytest.approx(1.0 / (np.pi**2 + 1.0))
    assert abs(report.rows[0].z_score) <= 5.0 or abs(report.rows[0].estimate - report.rows[0].analytic) < 3e-3


def fitted(slope: float, slope_stderr: float) -> RateExperimentResult:
    fit = RateFit(slope=slope, intercept=0.0, slope_stderr=slope_stderr, r_squared=1.0, used=(), excluded=())
    return RateExperimentResult(table=RateTable("rate", ()), fit=fit, reference_slope=None, status="ok")


def test_weak_slope_is_compared_within_joint_stderr() -> None:
    strong = fitted(0.43, 0.04)
    close = compare_weak_strong(fitted(0.36, 0.03), strong)
    assert close.passed
    assert close.joint_slope_stderr == pytest.approx(0.05)
    assert not compare_weak_strong(fitted(0.30, 0.03), strong).passed
    unfitted = RateExperimentResult(table=RateTable("rate", ()), fit=None, reference_slope=None, status=STATUS_FIT_REJECTED)
    missing = compare_weak_strong(unfitted, strong)
    assert not missing.passed
    assert missing.weak_slope is None


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [1.75, 1.5])
def test_strong_rate_matches_reference_slope(alpha: float) -> None:
    config = load_experiment_config(None, [f"noise.alpha={alpha}"])
    result = strong_rate_experiment(config, runtime(threads=0, chunk_size=250))
    assert result.fit is not None
    assert abs(result.fit.slope - strong_reference_slope(alpha)) <= config.experiment.slope_tolerance
    assert result.monotone, result.monotonicity_violations


@pytest.mark.slow
def test_weak_rate_is_at_least_the_strong_rate() -> None:
    strong = strong_rate_experiment(load_experiment_config(None, []), runtime(threads=0, chunk_size=250))
    config = load_experiment_config(None, ["experiment.mc_samples=20000"])
    weak = weak_rate_experiment(config, runtime(threads=0, chunk_size=1000))
    assert weak.fit is not None
    assert weak.fit.slope >= config.experiment.min_weak_slope
    assert compare_weak_strong(weak, strong).passed
