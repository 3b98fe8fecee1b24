from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .charts import write_rate_svg
from .config import (
    ExperimentConfig,
    RuntimeConfig,
    load_experiment_config,
    load_runtime_config,
    validate_experiment_config,
)
from .errors import AssumptionError, ConfigError, ExperimentFailure
from .harness import (
    RateExperimentResult,
    bbar_check,
    compare_weak_strong,
    build_problem,
    contraction_check,
    ergodicity_experiment,
    galerkin_convergence_experiment,
    moment_bound_check,
    noise_check,
    phi_check,
    strong_rate_experiment,
    weak_rate_experiment,
)
from .logging_utils import (
    emit,
    log_rate_result,
    write_dataclass_csv,
    write_manifest,
    write_rate_csv,
    write_table_csv,
)
from .stable_noise import check_assumption_a2


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ASSERTION = 2
ERGODIC_RATE_SLACK = 0.5
ERGODIC_MIN_R_SQUARED = 0.95

SUBCOMMANDS = (
    "strong-rate",
    "weak-rate",
    "rate-ladder",
    "galerkin",
    "ergodicity",
    "noise-check",
    "bbar-check",
    "phi-check",
    "contraction-check",
    "moment-check",
    "validate",
)


@dataclass(frozen=True)
class StageOutcome:
    outputs: dict[str, str]
    aborted: int
    passed: bool
    summary: dict[str, Any]


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    tool_version: str
    master_seed: int
    config: dict[str, Any]
    threads: int
    chunk_size: int
    duration_s: float
    outputs: dict[str, str]
    aborted: int
    passed: bool


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Averaging-rate experiments for slow-fast SPDEs with alpha-stable noise.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS, help="Experiment or check to run.")
    parser.add_argument("--config", type=Path, default=None, help="INI experiment config; built-in defaults when omitted.")
    parser.add_argument("--out", type=Path, default=None, help="Output directory (default: $SLOWFAST_OUTPUT_DIR/<subcommand>).")
    parser.add_argument("--seed", type=int, default=None, help="Master seed, overrides [experiment] master_seed.")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads, 0 = auto; overrides SLOWFAST_THREADS.")
    parser.add_argument("--assert", dest="assert_", action="store_true", help="Exit 2 when the result misses its target.")
    parser.add_argument("--deterministic", action="store_true", help="No progress bars and no timestamps in charts.")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one config value; repeatable.",
    )
    parser.add_argument(
        "--alpha",
        type=float,
        action="append",
        default=None,
        help="noise-check only: stability index to test; repeatable.",
    )
    return parser


def _rate_outputs(
    name: str,
    result: RateExperimentResult,
    out_dir: Path,
    runtime: RuntimeConfig,
    run_id: str,
    seed: int,
    timestamp: str | None,
) -> dict[str, str]:
    csv_path = write_rate_csv(out_dir / f"{name}.csv", result.table)
    svg_path = write_rate_svg(
        out_dir / f"{name}.svg",
        result.table,
        result.fit,
        result.reference_slope,
        title=name.replace("_", " "),
        timestamp=timestamp,
    )
    if runtime.db_logging:
        log_rate_result(runtime.db_path, run_id, result.table, result.fit, result.reference_slope, seed)
    return {f"{name}_csv": str(csv_path), f"{name}_svg": str(svg_path)}


def _fit_summary(result: RateExperimentResult) -> dict[str, Any]:
    summary: dict[str, Any] = {"status": result.status, "message": result.message, "reference_slope": result.reference_slope}
    if result.fit is not None:
        summary.update(
            slope=result.fit.slope,
            slope_stderr=result.fit.slope_stderr,
            intercept=result.fit.intercept,
            r_squared=result.fit.r_squared,
            excluded=[row.epsilon for row in result.fit.excluded],
        )
    return summary


def _strong_passed(config: ExperimentConfig, result: RateExperimentResult) -> bool:
    within = result.fit is not None and abs(result.fit.slope - result.reference_slope) <= config.experiment.slope_tolerance
    return within and result.monotone


def _strong_summary(result: RateExperimentResult) -> dict[str, Any]:
    return {
        **_fit_summary(result),
        "monotone": result.monotone,
        "monotonicity_violations": [list(pair) for pair in result.monotonicity_violations],
    }


def _strong(config, runtime, out_dir, run_id, timestamp) -> StageOutcome:
    result = strong_rate_experiment(config, runtime)
    outputs = _rate_outputs("strong_rate", result, out_dir, runtime, run_id, config.experiment.master_seed, timestamp)
    return StageOutcome(outputs, result.table.total_aborted, _strong_passed(config, result), _strong_summary(result))


def _weak(config, runtime, out_dir, run_id, timestamp) -> StageOutcome:
    result = weak_rate_experiment(config, runtime)
    outputs = _rate_outputs("weak_rate", result, out_dir, runtime, run_id, config.experiment.master_seed, timestamp)
    passed = result.fit is not None and result.fit.slope >= config.experiment.min_weak_slope
    return StageOutcome(outputs, result.table.total_aborted, passed, _fit_summary(result))


def _rate_ladder(config, runtime, out_dir, run_id, timestamp) -> StageOutcome:
    strong = strong_rate_experiment(config, runtime)
    weak = weak_rate_experiment(config, runtime)
    seed = config.experiment.master_seed
    outputs = {
        **_rate_outputs("strong_rate", strong, out_dir, runtime, run_id, seed, timestamp),
        **_rate_outputs("weak_rate", weak, out_dir, runtime, run_id, seed, timestamp),
    }
    comparison = compare_weak_strong(weak, strong)
    weak_passed = weak.fit is not None and weak.fit.slope >= config.experiment.min_weak_slope
    passed = _strong_passed(config, strong) and weak_passed and comparison.passed
    summary = {"strong": _strong_summary(strong), "weak": _fit_summary(weak), "weak_vs_strong": asdict(comparison)}
    return StageOutcome(outputs, strong.table.total_aborted + weak.table.total_aborted, passed, summary)


def _galerkin(config, runtime, out_dir, run_id, timestamp) -> StageOutcome:
    result = galerkin_convergence_experiment(config, runtime)
    csv_path = write_dataclass_csv(out_dir / "galerkin.csv", result.rows)
    aborted = result.rows[0].aborted if result.rows else 0
    summary = {"status": result.status, "reference_m": result.reference_m, "strictly_decreasing": result.strictly_decreasing}
    return StageOutcome({"galerkin_csv": str(csv_path)}, aborted, result.strictly_decreasing, summary)


def _ergodicity(config, runtime, out_dir, run_id, timestamp) -> StageOutcome:
    report = ergodicity_experiment(config)
    rows = [
        {"t": float(t), "gap": float(gap), "stderr": float(se), "noise_floor": float(floor)}
        for t, gap, se, floor in zip(report.times, report.gaps, report.gap_stderr, report.noise_floor)
    ]
    csv_path = write_table_csv(out_dir / "ergodicity.csv", list(rows[0]), ([row[key] for key in row] for row in rows))
    passed = report.status != "ok" or (
        report.fitted_rate >= report.bound_rate - ERGODIC_RATE_SLACK and report.r_squared >= ERGODIC_MIN_R_SQUARED
    )
    summary = {
        "status": report.status,
        "fitted_rate": report.fitted_rate,
        "rate_stderr": report.rate_stderr,
        "r_squared": report.r_squared,
        "bound_rate": report.bound_rate,
        "invariant_mean": report.invariant_mean,
    }
    return StageOutcome({"ergodicity_csv": str(csv_path)}, 0, passed, summary)


def _noise(config, runtime, out_dir, run_id, timestamp, alphas=None) -> StageOutcome:
    checks = config.checks
    rows = noise_check(
        alphas=tuple(alphas or checks.noise_alphas),
        u_points=checks.noise_u_points,
        n_samples=checks.noise_samples,
        seed=config.experiment.master_seed,
    )
    csv_path = write_dataclass_csv(out_dir / "noise_check.csv", rows)
    passed = all(row.passed for row in rows)
    summary = {"checks": len(rows), "failed": sum(not row.passed for row in rows)}
    return StageOutcome({"noise_check_csv": str(csv_path)}, 0, passed, summary)


def _estimator_check(name: str, check: Callable[[ExperimentConfig], Any]):
    def stage(config, runtime, out_dir, run_id, timestamp) -> StageOutcome:
        report = check(config)
        csv_path = write_dataclass_csv(out_dir / f"{name}.csv", report.rows)
        summary = {"status": report.status, "max_stderr": report.max_stderr, "passed": report.passed}
        return StageOutcome({f"{name}_csv": str(csv_path)}, 0, report.passed, summary)

    return stage


def _contraction(config, runtime, out_dir, run_id, timestamp) -> StageOutcome:
    problem = build_problem(config, epsilon=1.0)
    report = contraction_check(
        problem,
        n_pairs=config.checks.contraction_pairs,
        T=config.checks.contraction_T,
        h_f=config.bbar.h_f,
        seed=config.experiment.master_seed,
    )
    return StageOutcome({}, 0, report.passed, asdict(report))


def _moment(config, runtime, out_dir, run_id, timestamp) -> StageOutcome:
    problem = build_problem(config, epsilon=1.0)
    checks = config.checks
    report = moment_bound_check(
        problem,
        checks.moment_x_norms,
        checks.moment_y_norms,
        checks.moment_times,
        n_samples=checks.moment_samples,
        h_f=config.bbar.h_f,
        seed=config.experiment.master_seed,
    )
    csv_path = write_dataclass_csv(out_dir / "moment_check.csv", report.points)
    summary = {"calibrated_c": report.calibrated_c, "violations": report.violations}
    return StageOutcome({"moment_check_csv": str(csv_path)}, 0, report.passed, summary)


STAGES = {
    "strong-rate": _strong,
    "weak-rate": _weak,
    "rate-ladder": _rate_ladder,
    "galerkin": _galerkin,
    "ergodicity": _ergodicity,
    "bbar-check": _estimator_check("bbar_check", bbar_check),
    "phi-check": _estimator_check("phi_check", phi_check),
    "contraction-check": _contraction,
    "moment-check": _moment,
}
# checks fail the run without --assert
SELF_ASSERTING = {"noise-check", "bbar-check", "phi-check", "contraction-check", "moment-check"}


def validate_report(config: ExperimentConfig) -> dict[str, Any]:
    issues = validate_experiment_config(config)
    report: dict[str, Any] = {
        "event": "validate",
        "valid": not issues,
        "issues": [{"field": issue.field, "message": issue.message} for issue in issues],
    }
    if not issues:
        problem = build_problem(config, epsilon=1.0)
        a2 = check_assumption_a2(problem.noise, problem.spectrum)
        report["dissipativity_gap"] = problem.dissipativity_gap
        report["a2"] = asdict(a2)
    return report


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment_config(args.config, args.overrides)
    if args.seed is not None:
        config = replace(config, experiment=replace(config.experiment, master_seed=args.seed))
    return config


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load(args)
    except FileNotFoundError as exc:
        emit({"event": "error", "kind": "config", "message": str(exc)})
        return EXIT_CONFIG
    except ConfigError as exc:
        emit({"event": "error", "kind": "config", "issues": [asdict(issue) for issue in exc.issues]})
        return EXIT_CONFIG

    if args.subcommand == "validate":
        report = validate_report(config)
        emit(report)
        return EXIT_OK if report["valid"] else EXIT_CONFIG

    issues = validate_experiment_config(config)
    if issues:
        emit({"event": "error", "kind": "config", "issues": [asdict(issue) for issue in issues]})
        return EXIT_CONFIG

    runtime = load_runtime_config()
    if args.threads is not None:
        runtime = replace(runtime, threads=args.threads)
    if args.deterministic:
        runtime = replace(runtime, progress=False)
    out_dir = args.out or runtime.output_dir / args.subcommand
    started = time.perf_counter()
    now = datetime.now().astimezone()
    run_id = f"{args.subcommand}-{config.experiment.master_seed}-{now.strftime('%Y%m%dT%H%M%S')}"
    timestamp = None if args.deterministic else now.isoformat()
    emit({"event": "start", "subcommand": args.subcommand, "run_id": run_id, "out": str(out_dir)})

    try:
        if args.subcommand == "noise-check":
            outcome = _noise(config, runtime, out_dir, run_id, timestamp, alphas=args.alpha)
        else:
            outcome = STAGES[args.subcommand](config, runtime, out_dir, run_id, timestamp)
    except (ExperimentFailure, AssumptionError) as exc:
        emit({"event": "error", "kind": "experiment", "message": str(exc)})
        return EXIT_ASSERTION

    manifest = RunManifest(
        subcommand=args.subcommand,
        tool_version=__version__,
        master_seed=config.experiment.master_seed,
        config=config.as_dict(),
        threads=runtime.resolved_threads,
        chunk_size=runtime.chunk_size,
        duration_s=round(time.perf_counter() - started, 3),
        outputs=outcome.outputs,
        aborted=outcome.aborted,
        passed=outcome.passed,
    )
    manifest_path = out_dir / "manifest.txt"
    if manifest_path.exists():
        manifest_path.unlink()
    write_manifest(manifest_path, asdict(manifest))
    emit({"event": "summary", "subcommand": args.subcommand, "passed": outcome.passed, **outcome.summary})

    must_pass = args.assert_ or args.subcommand in SELF_ASSERTING
    return EXIT_ASSERTION if must_pass and not outcome.passed else EXIT_OK


def main() -> int:
    # stdout carries the JSON event stream
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return run()


if __name__ == "__main__":
    raise SystemExit(main())
