"""Dependency-free log-log SVG charts for rate tables."""
from __future__ import annotations

from math import ceil, floor, log10
from pathlib import Path

import numpy as np

from .rates import RateFit, RateTable


WIDTH = 640
HEIGHT = 440
MARGIN = 64
POINT_COLOR = "#1f4e79"
FIT_COLOR = "#c0392b"
REFERENCE_COLOR = "#7f8c8d"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _LogAxes:
    def __init__(self, xs: np.ndarray, ys: np.ndarray) -> None:
        self.x_lo = floor(log10(xs.min()))
        self.x_hi = max(ceil(log10(xs.max())), self.x_lo + 1)
        self.y_lo = floor(log10(ys.min()))
        self.y_hi = max(ceil(log10(ys.max())), self.y_lo + 1)

    def px(self, x: float) -> float:
        return MARGIN + (log10(x) - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - 2 * MARGIN)

    def py(self, y: float) -> float:
        return HEIGHT - MARGIN - (log10(y) - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - 2 * MARGIN)


def _line(axes: _LogAxes, x0: float, x1: float, slope: float, log_intercept: float, color: str, dash: str) -> str:
    y0 = np.exp(log_intercept + slope * np.log(x0))
    y1 = np.exp(log_intercept + slope * np.log(x1))
    return (
        f'<line x1="{axes.px(x0):.2f}" y1="{axes.py(y0):.2f}" x2="{axes.px(x1):.2f}" y2="{axes.py(y1):.2f}" '
        f'stroke="{color}" stroke-width="2" stroke-dasharray="{dash}"/>'
    )


def render_rate_svg(
    table: RateTable,
    fit: RateFit | None,
    reference_slope: float | None,
    title: str,
    timestamp: str | None = None,
) -> str:
    root_p = fit.root_p if fit is not None else 1.0
    plotted = [row for row in table.rows if row.error > 0.0]
    xs = np.array([row.epsilon for row in plotted] or [1e-2, 1.0])
    ys = np.array([row.error ** (1.0 / root_p) for row in plotted] or [1e-2, 1.0])
    axes = _LogAxes(xs, ys)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">'
    ]
    if timestamp is not None:
        parts.append(f"<!-- generated {_escape(timestamp)} -->")
    parts.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    parts.append(f'<text x="{WIDTH / 2:.0f}" y="28" text-anchor="middle" font-size="16">{_escape(title)}</text>')
    left, right = MARGIN, WIDTH - MARGIN
    top, bottom = MARGIN, HEIGHT - MARGIN
    parts.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="black"/>')
    for exponent in range(axes.x_lo, axes.x_hi + 1):
        x = axes.px(10.0**exponent)
        parts.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 6}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{bottom + 22}" text-anchor="middle" font-size="12">1e{exponent}</text>')
    for exponent in range(axes.y_lo, axes.y_hi + 1):
        y = axes.py(10.0**exponent)
        parts.append(f'<line x1="{left - 6}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 10}" y="{y + 4:.2f}" text-anchor="end" font-size="12">1e{exponent}</text>')
    parts.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 16}" text-anchor="middle" font-size="13">epsilon</text>')
    y_label = "error" if root_p == 1.0 else f"error^(1/{root_p:g})"
    parts.append(
        f'<text x="18" y="{HEIGHT / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {HEIGHT / 2:.0f})">{_escape(y_label)}</text>'
    )

    x_min, x_max = float(xs.min()), float(xs.max())
    legend = []
    if fit is not None:
        parts.append(_line(axes, x_min, x_max, fit.slope, fit.intercept, FIT_COLOR, "none"))
        legend.append((FIT_COLOR, f"fit slope {fit.slope:.3f} +/- {fit.slope_stderr:.3f}"))
        if reference_slope is not None:
            # reference line through the centroid of the fitted points
            log_x = np.log([row.epsilon for row in fit.used])
            log_y = np.log([row.error for row in fit.used]) / root_p
            anchor = float(log_y.mean() - reference_slope * log_x.mean())
            parts.append(_line(axes, x_min, x_max, reference_slope, anchor, REFERENCE_COLOR, "6 4"))
            legend.append((REFERENCE_COLOR, f"reference slope {reference_slope:.3f}"))
    for row, y in zip(plotted, ys):
        parts.append(
            f'<circle cx="{axes.px(row.epsilon):.2f}" cy="{axes.py(y):.2f}" r="4" fill="{POINT_COLOR}"/>'
        )
    for index, (color, label) in enumerate(legend):
        y = top + 18 + 18 * index
        parts.append(f'<line x1="{left + 12}" y1="{y - 4}" x2="{left + 36}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + 42}" y="{y}" font-size="12">{_escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_rate_svg(
    svg_path: Path,
    table: RateTable,
    fit: RateFit | None,
    reference_slope: float | None,
    title: str,
    timestamp: str | None = None,
) -> Path:
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    svg_path.write_text(render_rate_svg(table, fit, reference_slope, title, timestamp))
    return svg_path
