"""A small SVG writer for line charts and heatmaps (no plotting dependency)."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _n(x):
    return f"{x:.2f}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def _label(v):
    return f"{v:.3g}"


class Figure:
    """Fixed-size canvas with one set of axes."""

    def __init__(self, width=640, height=400, margin=(60, 20, 40, 50)):
        self.width, self.height = width, height
        self.left, self.right, self.top, self.bottom = margin
        self.items = []

    @property
    def plot_box(self):
        return self.left, self.top, self.width - self.left - self.right, self.height - self.top - self.bottom

    def text(self, x, y, s, size=12, anchor="middle", rotate=None):
        tr = f' transform="rotate({rotate} {_n(x)} {_n(y)})"' if rotate is not None else ""
        self.items.append(
            f'<text x="{_n(x)}" y="{_n(y)}" font-size="{size}" font-family="sans-serif" '
            f'text-anchor="{anchor}"{tr}>{escape(str(s))}</text>'
        )

    def line(self, x1, y1, x2, y2, color="#000", width=1.0):
        self.items.append(
            f'<line x1="{_n(x1)}" y1="{_n(y1)}" x2="{_n(x2)}" y2="{_n(y2)}" stroke="{color}" stroke-width="{width}"/>'
        )

    def polyline(self, pts, color, width=1.5):
        s = " ".join(f"{_n(x)},{_n(y)}" for x, y in pts)
        self.items.append(f'<polyline points="{s}" fill="none" stroke="{color}" stroke-width="{width}"/>')

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.items.append(
            f'<rect x="{_n(x)}" y="{_n(y)}" width="{_n(w)}" height="{_n(h)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def to_svg(self):
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">'
        )
        body = [head, f'<rect width="{self.width}" height="{self.height}" fill="#fff"/>', *self.items, "</svg>"]
        return "\n".join(body) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_svg())


def line_chart(series, title="", xlabel="", ylabel="", errors=None, width=640, height=400):
    """``series`` maps a label to ``(x, y)``; ``errors`` optionally maps labels to y errors."""
    fig = Figure(width, height)
    x0, y0, w, h = fig.plot_box
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = [np.asarray(y, float) for _, y in series.values()]
    if errors:
        ys += [np.asarray(series[k][1], float) + np.asarray(e, float) for k, e in errors.items()]
    ys = np.concatenate(ys)
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = min(0.0, float(ys.min())), float(ys.max())
    if xhi <= xlo:
        xhi = xlo + 1.0
    if yhi <= ylo:
        yhi = ylo + 1.0
    sx = lambda v: x0 + (v - xlo) / (xhi - xlo) * w
    sy = lambda v: y0 + h - (v - ylo) / (yhi - ylo) * h

    fig.line(x0, y0 + h, x0 + w, y0 + h)
    fig.line(x0, y0, x0, y0 + h)
    for t in _ticks(xlo, xhi):
        fig.line(sx(t), y0 + h, sx(t), y0 + h + 4)
        fig.text(sx(t), y0 + h + 16, _label(t), size=10)
    for t in _ticks(ylo, yhi):
        fig.line(x0 - 4, sy(t), x0, sy(t))
        fig.text(x0 - 6, sy(t) + 3, _label(t), size=10, anchor="end")
    for i, (label, (x, y)) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        fig.polyline(zip(map(sx, x), map(sy, y)), c)
        if errors and label in errors:
            for xi, yi, ei in zip(x, y, errors[label]):
                fig.line(sx(xi), sy(yi - ei), sx(xi), sy(yi + ei), c, 1.0)
        fig.line(x0 + w - 110, y0 + 12 + 14 * i, x0 + w - 95, y0 + 12 + 14 * i, c, 2.0)
        fig.text(x0 + w - 90, y0 + 16 + 14 * i, label, size=10, anchor="start")
    fig.text(x0 + w / 2, 16, title, size=14)
    fig.text(x0 + w / 2, fig.height - 8, xlabel)
    fig.text(14, y0 + h / 2, ylabel, rotate=-90)
    return fig


def heatmap(values, row_labels, col_labels, title="", xlabel="", ylabel="", width=520, height=420):
    """Grid of cells shaded from white (min) to dark blue (max), value printed in each."""
    v = np.asarray(values, dtype=float)
    fig = Figure(width, height, margin=(70, 20, 40, 50))
    x0, y0, w, h = fig.plot_box
    nr, nc = v.shape
    lo, hi = np.nanmin(v), np.nanmax(v)
    span = hi - lo if hi > lo else 1.0
    cw, ch = w / nc, h / nr
    for r in range(nr):
        for c in range(nc):
            f = (v[r, c] - lo) / span if np.isfinite(v[r, c]) else 0.0
            shade = (int(255 - 200 * f), int(255 - 170 * f), 255)
            fig.rect(x0 + c * cw, y0 + r * ch, cw, ch, "#%02x%02x%02x" % shade, "#888")
            fig.text(x0 + (c + 0.5) * cw, y0 + (r + 0.5) * ch + 4, _label(v[r, c]), size=11)
    for c, lab in enumerate(col_labels):
        fig.text(x0 + (c + 0.5) * cw, y0 + h + 16, lab, size=10)
    for r, lab in enumerate(row_labels):
        fig.text(x0 - 6, y0 + (r + 0.5) * ch + 4, lab, size=10, anchor="end")
    fig.text(x0 + w / 2, 16, title, size=14)
    fig.text(x0 + w / 2, fig.height - 8, xlabel)
    fig.text(14, y0 + h / 2, ylabel, rotate=-90)
    return fig
