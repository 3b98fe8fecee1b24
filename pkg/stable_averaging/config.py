from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import resolve_point_function
from .errors import ConfigError, ConfigIssue
from .spectral import DIRICHLET_LAPLACIAN_1D, SpectrumSpec
from .stable_noise import A2_STATUS_PASS, PowerDecay, StableNoiseSpec, check_assumption_a2


PACKAGE_DIR = Path(__file__).resolve().parent
PROJECT_DIR = PACKAGE_DIR.parent
FALSEY = {"0", "false", "no", "off"}

COEFFICIENTS_LINEAR = "linear"
COEFFICIENTS_NEMYTSKII = "nemytskii"
TEST_FUNCTIONS = ("cos", "gaussian", "constant")


def _env_flag(name: str, default: str = "1") -> bool:
    return os.environ.get(name, default).strip().lower() not in FALSEY


@dataclass(frozen=True)
class RuntimeConfig:
    project_dir: Path
    output_dir: Path
    db_path: Path
    threads: int
    chunk_size: int
    progress: bool
    db_logging: bool

    @property
    def resolved_threads(self) -> int:
        return self.threads if self.threads > 0 else max(1, os.cpu_count() or 1)


def load_runtime_config() -> RuntimeConfig:
    output_dir = Path(os.environ.get("SLOWFAST_OUTPUT_DIR", str(PROJECT_DIR / "results"))).expanduser()
    threads = int(os.environ.get("SLOWFAST_THREADS", "0"))
    chunk_size = int(os.environ.get("SLOWFAST_CHUNK_SIZE", "250"))
    if threads < 0:
        raise ValueError(f"SLOWFAST_THREADS must be >= 0, got {threads}.")
    if chunk_size < 1:
        raise ValueError(f"SLOWFAST_CHUNK_SIZE must be positive, got {chunk_size}.")
    return RuntimeConfig(
        project_dir=PROJECT_DIR,
        output_dir=output_dir,
        db_path=output_dir / "results.db",
        threads=threads,
        chunk_size=chunk_size,
        progress=_env_flag("SLOWFAST_PROGRESS"),
        db_logging=_env_flag("SLOWFAST_DB_LOGGING"),
    )


@dataclass(frozen=True)
class ProblemSettings:
    coefficients: str = COEFFICIENTS_LINEAR
    spectrum: str = DIRICHLET_LAPLACIAN_1D
    m: int = 8
    a: float = 1.0
    b: float = 1.0
    b0: float = 0.5
    b1: float = 1.0
    b_point: str = "tanh_sum"
    f_point: str = "sin_damped"


@dataclass(frozen=True)
class NoiseSettings:
    alpha: float = 1.75
    rho_beta: float = 2.0
    rho_gamma: float = 1.0
    c_beta: float = 1.0
    c_gamma: float = 1.0


@dataclass(frozen=True)
class ExperimentSettings:
    epsilons: tuple[float, ...] = tuple(2.0**-k for k in range(4, 10))
    mc_samples: int = 2000
    p: float = 1.0
    h: float = 2.0**-9
    T: float = 1.0
    x0_amplitude: float = 1.0
    x0_decay: float = 2.0
    test_function: str = "cos"
    test_mode: int = 1
    master_seed: int = 42
    coupled: bool = True
    c_sub: float = 0.0625
    slope_tolerance: float = 0.12
    min_weak_slope: float = 0.6


@dataclass(frozen=True)
class BbarSettings:
    kind: str = "auto"
    burn_in: float | None = None
    window: float | None = None
    h_f: float = 0.01
    n_chains: int = 256
    n_blocks: int = 16


@dataclass(frozen=True)
class GalerkinSettings:
    coefficients: str = COEFFICIENTS_NEMYTSKII
    m_ladder: tuple[int, ...] = (4, 8, 16, 32)
    m_reference: int = 64
    epsilon: float = 2.0**-4
    mc_samples: int = 256
    h: float = 2.0**-9


@dataclass(frozen=True)
class ErgodicitySettings:
    x_amplitude: float = 0.0
    y_amplitude: float = 5.0
    times: tuple[float, ...] = tuple(round(0.05 * k, 10) for k in range(9))
    mc_samples: int = 2000
    functional: str = "first_coordinate"


@dataclass(frozen=True)
class CheckSettings:
    contraction_pairs: int = 100
    contraction_T: float = 1.0
    moment_x_norms: tuple[float, ...] = (0.0, 1.0, 2.0)
    moment_y_norms: tuple[float, ...] = (0.0, 2.0, 5.0)
    moment_times: tuple[float, ...] = (0.05, 0.1, 0.2, 0.4, 0.8)
    moment_samples: int = 2000
    noise_alphas: tuple[float, ...] = (1.2, 1.5, 1.8)
    noise_u_points: tuple[float, ...] = (0.5, 1.0, 2.0)
    noise_samples: int = 100_000


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSettings = ProblemSettings()
    noise: NoiseSettings = NoiseSettings()
    experiment: ExperimentSettings = ExperimentSettings()
    bbar: BbarSettings = BbarSettings()
    galerkin: GalerkinSettings = GalerkinSettings()
    ergodicity: ErgodicitySettings = ErgodicitySettings()
    checks: CheckSettings = CheckSettings()

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


SECTION_TYPES = {
    "problem": ProblemSettings,
    "noise": NoiseSettings,
    "experiment": ExperimentSettings,
    "bbar": BbarSettings,
    "galerkin": GalerkinSettings,
    "ergodicity": ErgodicitySettings,
    "checks": CheckSettings,
}


def _parse_value(raw: str, default: Any, annotation: str) -> Any:
    text = raw.strip()
    if "None" in annotation and text.lower() in {"", "none", "auto"}:
        return None
    if isinstance(default, bool):
        lowered = text.lower()
        if lowered in {"1", "true", "yes", "on"}:
            return True
        if lowered in FALSEY:
            return False
        raise ValueError(f"expected a boolean, got '{raw}'")
    if isinstance(default, tuple):
        item_type = int if "int" in annotation else float
        return tuple(item_type(token) for token in text.replace(";", ",").split(",") if token.strip())
    if isinstance(default, int):
        return int(text, 0)
    if isinstance(default, float) or "float" in annotation:
        return float(text)
    return text


def _section_from_parser(name: str, parser: configparser.ConfigParser, issues: list[ConfigIssue]):
    section_type = SECTION_TYPES[name]
    defaults = section_type()
    values = {}
    known = {item.name: item for item in fields(section_type)}
    if parser.has_section(name):
        for key, raw in parser.items(name):
            if key not in known:
                issues.append(ConfigIssue(field=f"{name}.{key}", message="unknown setting"))
                continue
            try:
                values[key] = _parse_value(raw, getattr(defaults, key), str(known[key].type))
            except ValueError as exc:
                issues.append(ConfigIssue(field=f"{name}.{key}", message=str(exc)))
    return section_type(**values)


def apply_overrides(parser: configparser.ConfigParser, overrides: list[str]) -> list[ConfigIssue]:
    issues = []
    for override in overrides:
        target, separator, value = override.partition("=")
        section, dot, key = target.strip().partition(".")
        if not separator or not dot or not key:
            issues.append(ConfigIssue(field=override, message="override must look like section.key=value"))
            continue
        if section not in SECTION_TYPES:
            issues.append(ConfigIssue(field=target, message=f"unknown section '{section}'"))
            continue
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key.strip(), value.strip())
    return issues


def load_experiment_config(config_path: Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if config_path is not None:
        if not Path(config_path).is_file():
            raise FileNotFoundError(f"Config file not found: {config_path}")
        parser.read(config_path)
    issues = [
        ConfigIssue(field=section, message="unknown section")
        for section in parser.sections()
        if section not in SECTION_TYPES
    ]
    issues.extend(apply_overrides(parser, list(overrides or [])))
    sections = {name: _section_from_parser(name, parser, issues) for name in SECTION_TYPES}
    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(**sections)


def fast_lipschitz_constant(problem: ProblemSettings, coefficients: str | None = None) -> float:
    if (coefficients or problem.coefficients) == COEFFICIENTS_LINEAR:
        return problem.b
    return resolve_point_function(problem.f_point).lip_v


def validate_experiment_config(config: ExperimentConfig) -> list[ConfigIssue]:
    issues: list[ConfigIssue] = []
    problem = config.problem
    noise = config.noise
    experiment = config.experiment

    alpha_ok = 1.0 < noise.alpha < 2.0
    if not alpha_ok:
        issues.append(ConfigIssue("noise.alpha", f"alpha must lie in (1, 2), got {noise.alpha}"))
    if not (1.0 <= experiment.p < noise.alpha):
        issues.append(
            ConfigIssue("experiment.p", f"moments need 1 <= p < alpha; got p = {experiment.p}, alpha = {noise.alpha}")
        )

    epsilons = experiment.epsilons
    if not epsilons:
        issues.append(ConfigIssue("experiment.epsilons", "ladder is empty"))
    if any(not 0.0 < eps <= 1.0 for eps in epsilons):
        issues.append(ConfigIssue("experiment.epsilons", "values must lie in (0, 1]"))
    if len(set(epsilons)) != len(epsilons):
        issues.append(ConfigIssue("experiment.epsilons", "values must be distinct"))
    if not 0.0 < experiment.h <= experiment.T:
        issues.append(ConfigIssue("experiment.h", f"need 0 < h <= T, got h = {experiment.h}, T = {experiment.T}"))
    elif abs(round(experiment.T / experiment.h) * experiment.h - experiment.T) > 1e-9 * max(experiment.T, 1.0):
        issues.append(ConfigIssue("experiment.h", "h must divide T"))
    if experiment.mc_samples < 64:
        issues.append(ConfigIssue("experiment.mc_samples", "need at least 64 samples for block estimators"))
    if experiment.test_function not in TEST_FUNCTIONS:
        issues.append(ConfigIssue("experiment.test_function", f"expected one of {TEST_FUNCTIONS}"))
    if not 1 <= experiment.test_mode <= problem.m:
        issues.append(ConfigIssue("experiment.test_mode", f"mode must lie in 1..{problem.m}"))
    if experiment.c_sub <= 0.0:
        issues.append(ConfigIssue("experiment.c_sub", "substep fraction must be positive"))

    if problem.coefficients not in {COEFFICIENTS_LINEAR, COEFFICIENTS_NEMYTSKII}:
        issues.append(ConfigIssue("problem.coefficients", f"unknown coefficient family '{problem.coefficients}'"))
    for name in ("b_point", "f_point"):
        try:
            resolve_point_function(getattr(problem, name))
        except ValueError as exc:
            issues.append(ConfigIssue(f"problem.{name}", str(exc)))
    if problem.m < 1:
        issues.append(ConfigIssue("problem.m", "mode count must be positive"))
        return issues
    try:
        spectrum = SpectrumSpec.from_preset(problem.spectrum, problem.m)
    except ValueError as exc:
        issues.append(ConfigIssue("problem.spectrum", str(exc)))
        return issues

    if problem.b < 0.0:
        issues.append(ConfigIssue("problem.b", "fast self-damping must be nonnegative"))
    try:
        lip_f = fast_lipschitz_constant(problem)
    except ValueError:
        lip_f = None
    if lip_f is not None and spectrum.lambda_1 - lip_f <= 0.0:
        field_name = "problem.b" if problem.coefficients == COEFFICIENTS_LINEAR else "problem.f_point"
        issues.append(
            ConfigIssue(
                field_name,
                f"dissipativity lambda_1 - L_F > 0 fails (lambda_1 = {spectrum.lambda_1:.4f}, L_F = {lip_f:.4f})",
            )
        )

    if alpha_ok:
        decay = PowerDecay(noise.rho_beta, noise.rho_gamma, noise.c_beta, noise.c_gamma)
        spec = StableNoiseSpec.power_law(noise.alpha, problem.m, decay)
        report = check_assumption_a2(spec, spectrum)
        if report.slow_series_status != A2_STATUS_PASS:
            issues.append(
                ConfigIssue("noise.rho_beta", f"A2 slow series sum beta^alpha lambda^(alpha-1) is {report.slow_series_status}")
            )
        if report.fast_series_status != A2_STATUS_PASS:
            issues.append(ConfigIssue("noise.rho_gamma", f"A2 fast series sum gamma^alpha is {report.fast_series_status}"))

    if config.bbar.kind not in {"auto", "analytic", "ergodic", "ensemble"}:
        issues.append(ConfigIssue("bbar.kind", "expected auto, analytic, ergodic or ensemble"))
    if config.bbar.kind == "analytic" and problem.coefficients != COEFFICIENTS_LINEAR:
        issues.append(ConfigIssue("bbar.kind", "analytic averaged drift exists only for linear coefficients"))
    if config.bbar.n_chains < 4 * config.bbar.n_blocks or config.bbar.n_blocks < 8:
        issues.append(ConfigIssue("bbar.n_chains", "need n_blocks >= 8 and n_chains >= 4 * n_blocks"))

    galerkin = config.galerkin
    if not galerkin.m_ladder or any(m >= galerkin.m_reference or m < 1 for m in galerkin.m_ladder):
        issues.append(ConfigIssue("galerkin.m_ladder", "ladder entries must lie in 1..m_reference-1"))
    if list(galerkin.m_ladder) != sorted(set(galerkin.m_ladder)):
        issues.append(ConfigIssue("galerkin.m_ladder", "ladder must be strictly increasing"))
    if not 0.0 < galerkin.epsilon <= 1.0:
        issues.append(ConfigIssue("galerkin.epsilon", "epsilon must lie in (0, 1]"))

    times = np.asarray(config.ergodicity.times)
    if times.size < 3 or np.any(np.diff(times) <= 0.0) or np.any(times < 0.0):
        issues.append(ConfigIssue("ergodicity.times", "need at least 3 increasing nonnegative times"))
    return issues


def require_valid(config: ExperimentConfig) -> ExperimentConfig:
    issues = validate_experiment_config(config)
    if issues:
        raise ConfigError(issues)
    return config
