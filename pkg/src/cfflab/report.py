"""Standalone SVG figures.

Canvas is 640x400 px. The plot area spans x in [70, 620] and y in [30, 340];
data values map linearly onto it with 5% padding on the y range, so
``py = 340 - (v - lo) / (hi - lo) * 310``. Categorical x positions are evenly
spaced band centres.
"""

from __future__ import annotations

from html import escape
from typing import Mapping, Sequence

import numpy as np

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 620, 30, 340
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _yscale(values: Sequence[float]):
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    return lo, hi, lambda v: BOTTOM - (v - lo) / (hi - lo) * (BOTTOM - TOP)


def _frame(title: str, ylabel: str, lo: float, hi: float, y) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{BOTTOM}" x2="{RIGHT}" y2="{BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="black"/>',
        f'<text x="16" y="{(TOP + BOTTOM) / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(TOP + BOTTOM) / 2})">{escape(ylabel)}</text>',
    ]
    for v in np.linspace(lo, hi, 5):
        py = y(v)
        parts.append(f'<line x1="{LEFT - 4}" y1="{py:.2f}" x2="{LEFT}" y2="{py:.2f}" stroke="black"/>')
        parts.append(f'<text x="{LEFT - 6}" y="{py + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    return parts


def seed_dot_plot(groups: Mapping[str, Sequence[float]], title: str = "Per-seed test accuracy") -> str:
    """One column of dots per group, with the group mean and a ±1 std band."""
    labels = list(groups)
    allv = np.concatenate([np.asarray(groups[k], dtype=float) for k in labels])
    lo, hi, y = _yscale(allv)
    parts = _frame(title, "test accuracy (%)", lo, hi, y)
    band = (RIGHT - LEFT) / len(labels)
    for i, label in enumerate(labels):
        vals = np.asarray(groups[label], dtype=float)
        cx = LEFT + band * (i + 0.5)
        color = PALETTE[i % len(PALETTE)]
        mean = vals.mean()
        sd = vals.std(ddof=1) if vals.size > 1 else 0.0
        half = band * 0.3
        top, bot = y(mean + sd), y(mean - sd)
        parts.append(f'<rect class="band" x="{cx - half:.2f}" y="{top:.2f}" width="{2 * half:.2f}" '
                     f'height="{bot - top:.2f}" fill="{color}" fill-opacity="0.15"/>')
        parts.append(f'<line class="mean" x1="{cx - half:.2f}" y1="{y(mean):.2f}" x2="{cx + half:.2f}" '
                     f'y2="{y(mean):.2f}" stroke="{color}" stroke-width="2"/>')
        offsets = np.linspace(-0.15, 0.15, vals.size) * band if vals.size > 1 else [0.0]
        for v, dx in zip(vals, offsets):
            parts.append(f'<circle class="seed" cx="{cx + dx:.2f}" cy="{y(v):.2f}" r="4" fill="{color}"/>')
        parts.append(f'<text x="{cx:.2f}" y="{BOTTOM + 18}" text-anchor="middle">'
                     f'{escape(label)} (n={vals.size})</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def layer_line_chart(series: Mapping[str, Sequence[float]], title: str, ylabel: str) -> str:
    """One polyline per series over layer index 0..L-1."""
    labels = list(series)
    allv = np.concatenate([np.asarray(series[k], dtype=float) for k in labels])
    lo, hi, y = _yscale(allv)
    parts = _frame(title, ylabel, lo, hi, y)
    n = max(len(series[k]) for k in labels)
    step = (RIGHT - LEFT) / max(n - 1, 1)

    def x(i):
        return LEFT + 10 + i * (step - 20 / max(n - 1, 1)) if n > 1 else (LEFT + RIGHT) / 2

    for i in range(n):
        parts.append(f'<text x="{x(i):.2f}" y="{BOTTOM + 18}" text-anchor="middle">L{i}</text>')
    for j, label in enumerate(labels):
        vals = list(series[label])
        color = PALETTE[j % len(PALETTE)]
        pts = " ".join(f"{x(i):.2f},{y(v):.2f}" for i, v in enumerate(vals))
        parts.append(f'<polyline class="series" data-label="{escape(label)}" points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
        for i, v in enumerate(vals):
            parts.append(f'<circle class="point" cx="{x(i):.2f}" cy="{y(v):.2f}" r="3" fill="{color}"/>')
        parts.append(f'<text x="{RIGHT - 100}" y="{TOP + 16 * (j + 1)}" fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
