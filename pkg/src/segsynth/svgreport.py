"""Standalone SVG 1.1 box plots and repeatability line charts, no plotting framework."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

__all__ = ["BoxStats", "compute_box_stats", "boxplot_svg", "repeatability_svg"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]

_WIDTH = 960
_HEIGHT = 520
_MARGIN_LEFT = 70
_MARGIN_RIGHT = 170
_MARGIN_TOP = 50
_MARGIN_BOTTOM = 70


@dataclass(frozen=True)
class BoxStats:
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: Tuple[float, ...]


def compute_box_stats(values) -> BoxStats:
    """Tukey box statistics: linear-interpolation quartiles, 1.5 IQR whiskers."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("no values to summarize")
    q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = vals[(vals >= lo_fence) & (vals <= hi_fence)]
    whisker_low = float(inside.min())
    whisker_high = float(inside.max())
    outliers = tuple(float(v) for v in np.sort(vals[(vals < lo_fence) | (vals > hi_fence)]))
    return BoxStats(float(q1), float(med), float(q3), whisker_low, whisker_high, outliers)


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _header(title: str) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_WIDTH}" height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{_WIDTH / 2:.1f}" y="28" text-anchor="middle" '
        f'font-size="18" font-family="sans-serif">{_escape(title)}</text>',
    ]


def _y_scale(lo: float, hi: float):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    lo -= 0.05 * span
    hi += 0.05 * span
    plot_top = _MARGIN_TOP
    plot_bottom = _HEIGHT - _MARGIN_BOTTOM

    def to_px(v: float) -> float:
        frac = (v - lo) / (hi - lo)
        return plot_bottom - frac * (plot_bottom - plot_top)

    return to_px, lo, hi


def _axes(lines: List[str], to_px, lo: float, hi: float, ylabel: str) -> None:
    plot_left = _MARGIN_LEFT
    plot_right = _WIDTH - _MARGIN_RIGHT
    plot_bottom = _HEIGHT - _MARGIN_BOTTOM
    lines.append(
        f'<line x1="{plot_left}" y1="{_MARGIN_TOP}" x2="{plot_left}" '
        f'y2="{plot_bottom}" stroke="#000" stroke-width="1"/>'
    )
    lines.append(
        f'<line x1="{plot_left}" y1="{plot_bottom}" x2="{plot_right}" '
        f'y2="{plot_bottom}" stroke="#000" stroke-width="1"/>'
    )
    for i in range(6):
        v = lo + (hi - lo) * i / 5.0
        y = to_px(v)
        lines.append(
            f'<line x1="{plot_left - 4}" y1="{y:.2f}" x2="{plot_left}" y2="{y:.2f}" '
            f'stroke="#000" stroke-width="1"/>'
        )
        lines.append(
            f'<text x="{plot_left - 8}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{v:.3g}</text>'
        )
    lines.append(
        f'<text x="18" y="{(_MARGIN_TOP + plot_bottom) / 2:.1f}" font-size="13" '
        f'font-family="sans-serif" text-anchor="middle" '
        f'transform="rotate(-90 18 {(_MARGIN_TOP + plot_bottom) / 2:.1f})">'
        f"{_escape(ylabel)}</text>"
    )


def _legend(lines: List[str], labels: Sequence[str]) -> None:
    x = _WIDTH - _MARGIN_RIGHT + 18
    for i, label in enumerate(labels):
        y = _MARGIN_TOP + 16 + i * 22
        color = _COLORS[i % len(_COLORS)]
        lines.append(f'<rect x="{x}" y="{y - 9}" width="12" height="12" fill="{color}"/>')
        lines.append(
            f'<text x="{x + 18}" y="{y + 2}" font-size="12" '
            f'font-family="sans-serif">{_escape(label)}</text>'
        )


def boxplot_svg(
    title: str,
    ylabel: str,
    groups: Sequence[Tuple[str, Sequence[Tuple[str, Sequence[float]]]]],
) -> str:
    """Grouped box-and-whisker chart.

    ``groups`` is [(group_label, [(series_label, values), ...]), ...]; one box
    per (group, series) with non-empty values.
    """
    all_vals = [v for _, series in groups for _, vals in series for v in vals]
    if not all_vals:
        raise ValueError("no data to plot")
    series_labels: List[str] = []
    for _, series in groups:
        for name, _ in series:
            if name not in series_labels:
                series_labels.append(name)

    to_px, lo, hi = _y_scale(min(all_vals), max(all_vals))
    lines = _header(title)
    _axes(lines, to_px, lo, hi, ylabel)
    _legend(lines, series_labels)

    plot_left = _MARGIN_LEFT
    plot_right = _WIDTH - _MARGIN_RIGHT
    plot_bottom = _HEIGHT - _MARGIN_BOTTOM
    n_groups = len(groups)
    group_w = (plot_right - plot_left) / max(n_groups, 1)
    n_series = max(len(series_labels), 1)
    box_w = min(26.0, group_w / (n_series + 1) * 0.8)

    for gi, (group_label, series) in enumerate(groups):
        gx = plot_left + (gi + 0.5) * group_w
        lines.append(
            f'<text x="{gx:.1f}" y="{plot_bottom + 18}" text-anchor="middle" '
            f'font-size="12" font-family="sans-serif">{_escape(group_label)}</text>'
        )
        present = {name: vals for name, vals in series if len(vals) > 0}
        for si, name in enumerate(series_labels):
            vals = present.get(name)
            if vals is None:
                continue
            stats = compute_box_stats(vals)
            color = _COLORS[series_labels.index(name) % len(_COLORS)]
            cx = gx + (si - (n_series - 1) / 2.0) * (box_w * 1.4)
            x0 = cx - box_w / 2.0
            y_q1 = to_px(stats.q1)
            y_q3 = to_px(stats.q3)
            y_med = to_px(stats.median)
            y_lo = to_px(stats.whisker_low)
            y_hi = to_px(stats.whisker_high)
            lines.append(
                f'<line x1="{cx:.2f}" y1="{y_lo:.2f}" x2="{cx:.2f}" y2="{y_q1:.2f}" '
                f'stroke="{color}" stroke-width="1"/>'
            )
            lines.append(
                f'<line x1="{cx:.2f}" y1="{y_q3:.2f}" x2="{cx:.2f}" y2="{y_hi:.2f}" '
                f'stroke="{color}" stroke-width="1"/>'
            )
            for wy in (y_lo, y_hi):
                lines.append(
                    f'<line x1="{cx - box_w / 3:.2f}" y1="{wy:.2f}" '
                    f'x2="{cx + box_w / 3:.2f}" y2="{wy:.2f}" '
                    f'stroke="{color}" stroke-width="1"/>'
                )
            lines.append(
                f'<rect x="{x0:.2f}" y="{y_q3:.2f}" width="{box_w:.2f}" '
                f'height="{max(y_q1 - y_q3, 0.5):.2f}" fill="{color}" '
                f'fill-opacity="0.35" stroke="{color}"/>'
            )
            lines.append(
                f'<line x1="{x0:.2f}" y1="{y_med:.2f}" x2="{x0 + box_w:.2f}" '
                f'y2="{y_med:.2f}" stroke="{color}" stroke-width="2"/>'
            )
            for out in stats.outliers:
                lines.append(
                    f'<circle cx="{cx:.2f}" cy="{to_px(out):.2f}" r="2.2" '
                    f'fill="none" stroke="{color}"/>'
                )
    lines.append("</svg>")
    return "\n".join(lines)


def repeatability_svg(
    title: str,
    sequences: Sequence[str],
    lines_data: Sequence[Tuple[str, str, Sequence[Optional[float]]]],
) -> str:
    """Connected per-subject trajectories across sequences, gaps where missing.

    ``lines_data`` entries are (series_label, subject, values-per-sequence)
    with None marking a missing point; lines are colored per series label.
    """
    finite = [v for _, _, vals in lines_data for v in vals if v is not None]
    if not finite or not sequences:
        raise ValueError("no data to plot")
    series_labels: List[str] = []
    for name, _, _ in lines_data:
        if name not in series_labels:
            series_labels.append(name)

    to_px, lo, hi = _y_scale(min(finite), max(finite))
    lines = _header(title)
    _axes(lines, to_px, lo, hi, "volume (mL)")
    _legend(lines, series_labels)

    plot_left = _MARGIN_LEFT
    plot_right = _WIDTH - _MARGIN_RIGHT
    plot_bottom = _HEIGHT - _MARGIN_BOTTOM
    n_seq = len(sequences)
    step = (plot_right - plot_left) / max(n_seq, 1)
    xs = [plot_left + (i + 0.5) * step for i in range(n_seq)]
    for x, name in zip(xs, sequences):
        lines.append(
            f'<text x="{x:.1f}" y="{plot_bottom + 18}" text-anchor="middle" '
            f'font-size="12" font-family="sans-serif">{_escape(name)}</text>'
        )

    for name, _subject, vals in lines_data:
        color = _COLORS[series_labels.index(name) % len(_COLORS)]
        run: List[Tuple[float, float]] = []
        segments: List[List[Tuple[float, float]]] = []
        for i, v in enumerate(vals):
            if v is None:
                if run:
                    segments.append(run)
                    run = []
            else:
                run.append((xs[i], to_px(v)))
        if run:
            segments.append(run)
        for seg in segments:
            if len(seg) > 1:
                points = " ".join(f"{x:.2f},{y:.2f}" for x, y in seg)
                lines.append(
                    f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
                    f'stroke-opacity="0.7" points="{points}"/>'
                )
            for x, y in seg:
                lines.append(
                    f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.4" fill="{color}"/>'
                )
    lines.append("</svg>")
    return "\n".join(lines)
