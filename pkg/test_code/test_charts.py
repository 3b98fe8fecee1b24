from __future__ import annotations

from pathlib import Path

from stable_averaging.charts import render_rate_svg, write_rate_svg
from stable_averaging.rates import RateRow, RateTable, fit_loglog


def table() -> RateTable:
    return RateTable(
        "strong_rate",
        tuple(
            RateRow(epsilon=eps, error=0.2 * eps ** (3.0 / 7.0), stderr=1e-4, n_effective=2000, aborted=0)
            for eps in (0.0625, 0.03125, 0.015625, 0.0078125)
        ),
    )


def test_svg_is_deterministic_without_timestamp() -> None:
    rows = table()
    fit = fit_loglog(rows.rows)
    first = render_rate_svg(rows, fit, 3.0 / 7.0, "strong rate")
    second = render_rate_svg(rows, fit, 3.0 / 7.0, "strong rate")
    assert first == second
    assert first.startswith("<svg")
    assert "<!--" not in first
    assert first.count("<circle") == 4
    assert "fit slope 0.429" in first
    assert "reference slope 0.429" in first


def test_svg_timestamp_and_escaping(tmp_path: Path) -> None:
    path = write_rate_svg(tmp_path / "chart.svg", table(), None, None, "a < b & c", timestamp="2026-01-01T00:00:00")
    text = path.read_text()
    assert "<!-- generated 2026-01-01T00:00:00 -->" in text
    assert "a &lt; b &amp; c" in text
    assert "fit slope" not in text


def test_svg_handles_all_zero_errors() -> None:
    zeros = RateTable(
        "weak_rate",
        tuple(RateRow(epsilon=eps, error=0.0, stderr=0.0, n_effective=64, aborted=0) for eps in (0.5, 0.25, 0.125)),
    )
    text = render_rate_svg(zeros, None, None, "weak rate")
    assert "<circle" not in text
    assert text.rstrip().endswith("</svg>")
