from __future__ import annotations

import json
from pathlib import Path

import pytest

from stable_averaging import __version__
from stable_averaging.cli import EXIT_CONFIG, EXIT_OK, build_parser, run


SMALL_LADDER = [
    "--set", "problem.m=2",
    "--set", "experiment.epsilons=0.25,0.125,0.0625",
    "--set", "experiment.mc_samples=64",
    "--set", "experiment.h=0.015625",
    "--set", "experiment.T=0.25",
]


@pytest.fixture(autouse=True)
def quiet_runtime(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.setenv("SLOWFAST_OUTPUT_DIR", str(tmp_path / "results"))
    monkeypatch.setenv("SLOWFAST_PROGRESS", "0")
    monkeypatch.setenv("SLOWFAST_DB_LOGGING", "0")
    monkeypatch.setenv("SLOWFAST_CHUNK_SIZE", "32")


def events(capsys: pytest.CaptureFixture[str]) -> list[dict]:
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.strip()]


def test_parser_flags() -> None:
    args = build_parser().parse_args(["noise-check", "--alpha", "1.2", "--alpha", "1.8", "--assert", "--set", "a.b=1"])
    assert args.alpha == [1.2, 1.8]
    assert args.assert_
    assert args.overrides == ["a.b=1"]


def test_missing_config_exits_before_creating_output(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out_dir = tmp_path / "out"
    code = run(["strong-rate", "--config", str(tmp_path / "missing.cfg"), "--out", str(out_dir)])
    assert code == EXIT_CONFIG
    assert not out_dir.exists()
    assert events(capsys)[-1]["kind"] == "config"


def test_unknown_override_is_a_config_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out_dir = tmp_path / "out"
    assert run(["strong-rate", "--set", "noise.beta=2", "--out", str(out_dir)]) == EXIT_CONFIG
    assert not out_dir.exists()
    assert events(capsys)[-1]["issues"][0]["field"] == "noise.beta"


def test_invalid_moment_order_is_rejected_before_running(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out_dir = tmp_path / "out"
    assert run(["strong-rate", "--set", "experiment.p=1.8", "--out", str(out_dir)]) == EXIT_CONFIG
    assert not out_dir.exists()
    message = events(capsys)[-1]["issues"][0]["message"]
    assert "p < alpha" in message


def test_validate(capsys: pytest.CaptureFixture[str]) -> None:
    assert run(["validate"]) == EXIT_OK
    report = events(capsys)[-1]
    assert report["valid"] is True
    assert report["a2"]["slow_series_status"] == "pass"
    assert report["dissipativity_gap"] == pytest.approx(8.8696044, rel=1e-6)

    assert run(["validate", "--set", "noise.alpha=1.5", "--set", "experiment.p=1.5"]) == EXIT_CONFIG
    report = events(capsys)[-1]
    assert report["valid"] is False
    assert report["issues"][0]["field"] == "experiment.p"


def test_deterministic_strong_rate_runs_are_byte_identical(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    outputs = []
    for name, threads in (("first", "1"), ("second", "3")):
        out_dir = tmp_path / name
        code = run(["strong-rate", *SMALL_LADDER, "--deterministic", "--threads", threads, "--seed", "99", "--out", str(out_dir)])
        assert code == EXIT_OK
        outputs.append(out_dir)
    for filename in ("strong_rate.csv", "strong_rate.svg"):
        assert (outputs[0] / filename).read_bytes() == (outputs[1] / filename).read_bytes()
    manifest = json.loads((outputs[0] / "manifest.txt").read_text())
    assert manifest["subcommand"] == "strong-rate"
    assert manifest["tool_version"] == __version__
    assert manifest["master_seed"] == 99
    assert manifest["config"]["experiment"]["epsilons"] == [0.25, 0.125, 0.0625]
    assert set(manifest["outputs"]) == {"strong_rate_csv", "strong_rate_svg"}
    summary = events(capsys)[-1]
    assert summary["event"] == "summary"
    assert summary["subcommand"] == "strong-rate"
    assert summary["monotone"] is True
    assert summary["monotonicity_violations"] == []


def test_check_rerun_replaces_manifest(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out_dir = tmp_path / "contraction"
    argv = ["contraction-check", "--set", "checks.contraction_pairs=10", "--out", str(out_dir)]
    assert run(argv) == EXIT_OK
    assert run(argv) == EXIT_OK
    manifest = json.loads((out_dir / "manifest.txt").read_text())
    assert manifest["passed"] is True
    assert events(capsys)[-1]["violations"] == 0


def test_rate_ladder_compares_weak_and_strong(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    out_dir = tmp_path / "ladder"
    assert run(["rate-ladder", *SMALL_LADDER, "--out", str(out_dir)]) == EXIT_OK
    summary = events(capsys)[-1]
    assert summary["subcommand"] == "rate-ladder"
    assert {"strong", "weak", "weak_vs_strong"} <= set(summary)
    assert "monotone" in summary["strong"]
    assert summary["weak_vs_strong"]["n_stderr"] == 2.0
    manifest = json.loads((out_dir / "manifest.txt").read_text())
    assert set(manifest["outputs"]) == {"strong_rate_csv", "strong_rate_svg", "weak_rate_csv", "weak_rate_svg"}
