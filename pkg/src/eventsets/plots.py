"""Deterministic SVG figures: event timelines, attention heatmaps, AR-vs-AN curves.

Coordinates are written with fixed precision so identical inputs give
identical bytes.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .core import SequenceSample
from .decode import DetectionRecord

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")

TIMELINE_LEFT = 60.0
TIMELINE_WIDTH = 640.0
LANE_HEIGHT = 28.0


def _f(x: float) -> str:
    return f"{x:.2f}"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
        f'viewBox="0 0 {_f(width)} {_f(height)}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join([head, f'<rect width="{_f(width)}" height="{_f(height)}" fill="white"/>', *body, "</svg>"]) + "\n"


def _frame_ticks(T: int, x0: float, width: float, y: float) -> list[str]:
    step = max(1, int(round(T / 8)))
    out = [f'<line x1="{_f(x0)}" y1="{_f(y)}" x2="{_f(x0 + width)}" y2="{_f(y)}" stroke="black"/>']
    for t in range(0, T + 1, step):
        x = x0 + width * t / T
        out.append(f'<line x1="{_f(x)}" y1="{_f(y)}" x2="{_f(x)}" y2="{_f(y + 4)}" stroke="black"/>')
        out.append(f'<text x="{_f(x)}" y="{_f(y + 15)}" text-anchor="middle">{t}</text>')
    return out


def timeline_svg(sample: SequenceSample, detections: Sequence[DetectionRecord], C: int,
                 title: str | None = None) -> str:
    """One lane per class: ground truth as hollow bars, detections filled with opacity equal to score."""
    T = sample.length
    top = 24.0
    scale = TIMELINE_WIDTH / T
    body = [f'<text x="{_f(TIMELINE_LEFT)}" y="16">{_esc(title or sample.id)}</text>']
    for c in range(1, C + 1):
        y = top + (c - 1) * LANE_HEIGHT
        color = PALETTE[(c - 1) % len(PALETTE)]
        body.append(f'<text x="4" y="{_f(y + LANE_HEIGHT / 2 + 4)}">class {c}</text>')
        body.append(f'<g class="det" data-class="{c}">')
        for d in sorted((d for d in detections if d.class_id == c), key=lambda d: (d.score, d.start, d.end)):
            x = TIMELINE_LEFT + d.start * scale
            w = (d.end - d.start) * scale
            op = min(1.0, max(0.0, d.score))
            body.append(
                f'<rect x="{_f(x)}" y="{_f(y + 8)}" width="{_f(w)}" height="{_f(LANE_HEIGHT - 16)}" '
                f'fill="{color}" fill-opacity="{op:.3f}"/>'
            )
        body.append("</g>")
        body.append(f'<g class="gt" data-class="{c}">')
        for e in sample.events:
            if e.class_id == c:
                x = TIMELINE_LEFT + e.start * scale
                w = (e.end - e.start) * scale
                body.append(
                    f'<rect x="{_f(x)}" y="{_f(y + 4)}" width="{_f(w)}" height="{_f(LANE_HEIGHT - 8)}" '
                    f'fill="none" stroke="{color}" stroke-width="1.5"/>'
                )
        body.append("</g>")
    axis_y = top + C * LANE_HEIGHT + 4
    body.extend(_frame_ticks(T, TIMELINE_LEFT, TIMELINE_WIDTH, axis_y))
    return _svg(TIMELINE_LEFT + TIMELINE_WIDTH + 20, axis_y + 24, body)


def _heat_color(v: float) -> str:
    # white -> dark blue
    v = min(1.0, max(0.0, v))
    r = int(round(255 - 222 * v))
    g = int(round(255 - 180 * v))
    b = int(round(255 - 75 * v))
    return f"#{r:02x}{g:02x}{b:02x}"


def attention_svg(weights: np.ndarray, sample: SequenceSample, row_labels: Sequence[str],
                  cell: float = 8.0) -> str:
    """Heatmap of ``(rows, T)`` attention; colour is scaled per row by its maximum.

    Ground-truth boundaries of every class are drawn as vertical rules.
    """
    w = np.asarray(weights, dtype=np.float64)
    n, T = w.shape
    if len(row_labels) != n:
        raise ValueError(f"{len(row_labels)} labels for {n} rows")
    left, top = 110.0, 20.0
    body = []
    for i in range(n):
        y = top + i * cell
        peak = w[i].max() if n else 1.0
        body.append(f'<text x="4" y="{_f(y + cell - 1)}" font-size="{_f(min(cell, 11))}">{_esc(row_labels[i])}</text>')
        for t in range(T):
            v = w[i, t] / peak if peak > 0 else 0.0
            body.append(f'<rect x="{_f(left + t * cell)}" y="{_f(y)}" width="{_f(cell)}" height="{_f(cell)}" fill="{_heat_color(v)}"/>')
    bottom = top + n * cell
    for e in sample.events:
        color = PALETTE[(e.class_id - 1) % len(PALETTE)]
        for b in (e.start, e.end):
            x = left + b * cell
            body.append(f'<line class="gt" x1="{_f(x)}" y1="{_f(top)}" x2="{_f(x)}" y2="{_f(bottom)}" stroke="{color}" stroke-width="1"/>')
    body.extend(_frame_ticks(T, left, T * cell, bottom + 4))
    return _svg(left + T * cell + 20, bottom + 30, body)


def ar_curve_svg(curves: Mapping[str, Sequence[float]], an: Sequence[int]) -> str:
    """AR (percent) against AN, one polyline per labelled curve."""
    left, top, width, height = 50.0, 20.0, 480.0, 260.0
    an = np.asarray(list(an), dtype=np.float64)
    lo, hi = an.min(), an.max()
    span = hi - lo if hi > lo else 1.0
    body = [
        f'<rect x="{_f(left)}" y="{_f(top)}" width="{_f(width)}" height="{_f(height)}" fill="none" stroke="black"/>',
    ]
    for v in range(0, 101, 20):
        y = top + height * (1 - v / 100)
        body.append(f'<text x="{_f(left - 6)}" y="{_f(y + 4)}" text-anchor="end">{v}</text>')
    for a in np.linspace(lo, hi, 5):
        x = left + width * (a - lo) / span
        body.append(f'<text x="{_f(x)}" y="{_f(top + height + 15)}" text-anchor="middle">{int(round(a))}</text>')
    body.append(f'<text x="{_f(left + width / 2)}" y="{_f(top + height + 30)}" text-anchor="middle">AN</text>')
    for k, (label, ar) in enumerate(curves.items()):
        ar = np.asarray(ar, dtype=np.float64)
        pts = " ".join(f"{_f(left + width * (a - lo) / span)},{_f(top + height * (1 - v / 100))}" for a, v in zip(an, ar))
        color = PALETTE[k % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 14 * k
        body.append(f'<text x="{_f(left + width - 8)}" y="{_f(ly)}" text-anchor="end" fill="{color}">{_esc(label)}</text>')
    return _svg(left + width + 20, top + height + 40, body)
