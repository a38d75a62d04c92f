"""Minimal SVG line plots: polylines, shaded bands and markers on an 800x500 canvas."""

from __future__ import annotations

from dataclasses import dataclass, field
from html import escape

import numpy as np

WIDTH, HEIGHT = 800, 500
MARGIN = (70, 30, 40, 50)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


@dataclass
class Panel:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    lines: list = field(default_factory=list)    # (x, y, color, label, dashed)
    bands: list = field(default_factory=list)    # (x, lo, hi, color)
    markers: list = field(default_factory=list)  # (x, y, color, label)

    def line(self, x, y, color=None, label="", dashed=False):
        color = color or PALETTE[len(self.lines) % len(PALETTE)]
        self.lines.append((np.asarray(x, float), np.asarray(y, float), color, label, dashed))

    def band(self, x, lo, hi, color="#999999"):
        self.bands.append((np.asarray(x, float), np.asarray(lo, float), np.asarray(hi, float), color))

    def scatter(self, x, y, color="#1f77b4", label=""):
        self.markers.append((np.asarray(x, float), np.asarray(y, float), color, label))


def _limits(panel: Panel):
    xs, ys = [], []
    for x, y, *_ in panel.lines + panel.markers:
        xs.append(x)
        ys.append(y)
    for x, lo, hi, _ in panel.bands:
        xs.append(x)
        ys += [lo, hi]
    x = np.concatenate(xs) if xs else np.array([0.0, 1.0])
    y = np.concatenate(ys) if ys else np.array([0.0, 1.0])
    x, y = x[np.isfinite(x)], y[np.isfinite(y)]
    x0, x1 = (x.min(), x.max()) if x.size else (0.0, 1.0)
    y0, y1 = (y.min(), y.max()) if y.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    return x0, x1, y0 - pad, y1 + pad


def render(panel: Panel) -> str:
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom
    x0, x1, y0, y1 = _limits(panel)

    def px(x):
        return left + (np.asarray(x) - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - (np.asarray(y) - y0) / (y1 - y0)) * ph

    def pts(x, y):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x), py(y)))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in np.linspace(0, 1, 6):
        xv, yv = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    for x, lo, hi, color in panel.bands:
        poly = pts(np.concatenate([x, x[::-1]]), np.concatenate([hi, lo[::-1]]))
        out.append(f'<polygon points="{poly}" fill="{color}" fill-opacity="0.35" stroke="none"/>')
    for x, y, color, _, dashed in panel.lines:
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        out.append(f'<polyline points="{pts(x, y)}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
    for x, y, color, _ in panel.markers:
        for a, b in zip(px(x), py(y)):
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3.5" fill="{color}"/>')
    labelled = [(c, l) for *_, c, l, _ in panel.lines if l] + [(c, l) for *_, c, l in panel.markers if l]
    for i, (color, label) in enumerate(labelled):
        y = top + 14 + 16 * i
        out.append(f'<line x1="{left + 10}" y1="{y - 4}" x2="{left + 30}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + 36}" y="{y}">{escape(label)}</text>')
    if panel.title:
        out.append(f'<text x="{WIDTH / 2}" y="{top - 12}" text-anchor="middle" font-size="14">{escape(panel.title)}</text>')
    if panel.xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(panel.xlabel)}</text>')
    if panel.ylabel:
        out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + ph / 2})">{escape(panel.ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(path, panel: Panel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render(panel))
