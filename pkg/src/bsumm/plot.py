"""Hand-emitted SVG: relative error (log10) against #MVM, one polyline per trace."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=20, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
FLOOR = 1e-300


def _points(records):
    pts = []
    for r in records:
        if r.rel_err is None or not math.isfinite(r.rel_err):
            continue
        pts.append((float(r.mvm_count), math.log10(max(r.rel_err, FLOOR))))
    return pts


def render_svg(series):
    """``series``: list of ``(label, records)``. Records need ``mvm_count`` and ``rel_err``."""
    if not series:
        raise ValueError("nothing to plot")
    curves = [(label, _points(recs)) for label, recs in series]
    allpts = [pt for _, pts in curves for pt in pts]
    if not allpts:
        raise ValueError("no trace has rel_err values")
    x0, x1 = min(p[0] for p in allpts), max(p[0] for p in allpts)
    y0, y1 = math.floor(min(p[1] for p in allpts)), math.ceil(max(p[1] for p in allpts))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1
    L, T = MARGIN["left"], MARGIN["top"]
    W = WIDTH - L - MARGIN["right"]
    H = HEIGHT - T - MARGIN["bottom"]

    def sx(v):
        return L + W * (v - x0) / (x1 - x0)

    def sy(v):
        return T + H * (y1 - v) / (y1 - y0)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="{L}" y="{T}" width="{W}" height="{H}" fill="none" stroke="#000"/>',
    ]
    step = max(1, (y1 - y0 + 7) // 8)
    for e in range(y0, y1 + 1, step):
        y = sy(e)
        out.append(f'<line x1="{L}" y1="{y:.2f}" x2="{L + W}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{L - 6}" y="{y + 4:.2f}" text-anchor="end">1e{e}</text>')
    for i in range(5):
        v = x0 + (x1 - x0) * i / 4
        out.append(f'<text x="{sx(v):.2f}" y="{T + H + 16}" text-anchor="middle">{v:.4g}</text>')
    out.append(f'<text x="{L + W / 2}" y="{HEIGHT - 10}" text-anchor="middle">#MVM</text>')
    out.append(
        f'<text x="16" y="{T + H / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {T + H / 2})">relative error</text>'
    )
    for i, (label, pts) in enumerate(curves):
        color = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(a):.3f},{sy(b):.3f}" for a, b in pts)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly = T + 14 + 16 * i
        out.append(f'<line x1="{L + W + 10}" y1="{ly - 4}" x2="{L + W + 30}" y2="{ly - 4}" stroke="{color}"/>')
        out.append(f'<text x="{L + W + 34}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_csvs(paths, out_svg):
    from .solvers import read_trace_csv

    if not paths:
        raise ValueError("no CSV files given")
    series = [(Path(p).stem, read_trace_csv(p)) for p in paths]
    Path(out_svg).write_text(render_svg(series))
