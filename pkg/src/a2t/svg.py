"""Minimal static SVG line charts and heat maps (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               width: int = 640, height: int = 400) -> str:
    """``series`` maps a label to ``(x, y)`` or ``(x, y, lo, hi)``; lo/hi draw a shaded band."""
    if not series:
        raise ValueError("nothing to plot")
    ml, mr, mt, mb = 60, 150, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(s[0], dtype=float) for s in series.values()])
    ys = np.concatenate([np.asarray(v, dtype=float) for s in series.values() for v in s[1:]])
    ys = ys[np.isfinite(ys)]
    x0, x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return ml + (np.asarray(x, dtype=float) - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (np.asarray(y, dtype=float) - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{_fmt(px(t))}" y="{mt + ph + 15}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{_fmt(py(t))}" y2="{_fmt(py(t))}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 5}" y="{_fmt(py(t) + 4)}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>')
    for k, (label, s) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        x, y = np.asarray(s[0], dtype=float), np.asarray(s[1], dtype=float)
        if len(s) == 4:
            lo, hi = np.asarray(s[2], dtype=float), np.asarray(s[3], dtype=float)
            pts = [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(x), py(hi))]
            pts += [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(x)[::-1], py(lo)[::-1])]
            out.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px(x), py(y)) if np.isfinite(b))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 12 + 16 * k
        out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(values, row_labels=None, col_labels=None, title: str = "", cell: int = 18) -> str:
    """Rows are states, columns are members; values are expected in [0, 1]."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.size == 0:
        raise ValueError("heat map needs a non-empty 2-d array")
    rows, cols = v.shape
    row_labels = list(row_labels) if row_labels is not None else [str(i) for i in range(rows)]
    col_labels = list(col_labels) if col_labels is not None else [f"w_{j + 1}" for j in range(cols)]
    ml, mt = 50, 45
    width, height = ml + cols * cell * 3 + 20, mt + rows * cell + 20
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="14" text-anchor="middle" font-size="12">{escape(title)}</text>']
    cw = cell * 3
    for j, lab in enumerate(col_labels):
        out.append(f'<text x="{ml + j * cw + cw / 2}" y="{mt - 6}" text-anchor="middle">{escape(lab)}</text>')
    for i in range(rows):
        y = mt + i * cell
        out.append(f'<text x="{ml - 4}" y="{y + cell - 5}" text-anchor="end">{escape(row_labels[i])}</text>')
        for j in range(cols):
            a = float(np.clip(v[i, j], 0.0, 1.0))
            shade = int(round(255 * (1.0 - a)))
            out.append(f'<rect x="{ml + j * cw}" y="{y}" width="{cw}" height="{cell}" '
                       f'fill="rgb({shade},{shade},255)" stroke="white"><title>{a:.3f}</title></rect>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(path, markup: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(markup)
    return path
