"""Minimal static SVG emission for reports.

Hand-rolled on purpose: output depends only on the data and fixed float
formatting, so reruns are byte-identical (no timestamps, ids, or fonts
resolved at render time).
"""

from __future__ import annotations

from pathlib import Path


def _f(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def _scale(values, lo, hi, out_lo, out_hi):
    span = hi - lo if hi > lo else 1.0
    return [(out_lo + (v - lo) / span * (out_hi - out_lo)) for v in values]


def scatter_grid(panels, path, *, cols: int = 5, cell: int = 140,
                 point_radius: float = 1.6) -> None:
    """Grid of square scatter panels.

    ``panels`` is a list of (title, x-values, y-values, highlighted) in
    render order; highlighted panels get a red title. Each panel shows an
    identity line across its own data range.
    """
    pad = 26
    rows = (len(panels) + cols - 1) // cols
    width = cols * cell
    height = rows * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for idx, (title, xs, ys, highlighted) in enumerate(panels):
        ox = (idx % cols) * cell
        oy = (idx // cols) * cell
        x0, x1 = ox + pad, ox + cell - 8
        y0, y1 = oy + cell - pad, oy + 16
        lo = min(min(xs), min(ys))
        hi = max(max(xs), max(ys))
        px = _scale(xs, lo, hi, x0, x1)
        py = _scale(ys, lo, hi, y0, y1)
        color = "#cc0000" if highlighted else "#222222"
        parts.append(
            f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" '
            f'fill="none" stroke="#999999" stroke-width="0.8"/>'
        )
        parts.append(
            f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" '
            f'stroke="#bbbbbb" stroke-width="0.8"/>'
        )
        for x, y in zip(px, py):
            parts.append(
                f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{point_radius}" '
                f'fill="#3366aa" fill-opacity="0.7"/>'
            )
        parts.append(
            f'<text x="{ox + cell / 2}" y="{oy + 12}" font-size="10" '
            f'font-family="sans-serif" text-anchor="middle" '
            f'fill="{color}">{title}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def km_plot(curves, path, *, width: int = 420, height: int = 300,
            caption: str = "") -> None:
    """Step-function survival curves for one or more groups.

    ``curves`` is a list of (label, times, probabilities) triples; each
    curve starts implicitly at (0, 1). Time axis spans the pooled range.
    """
    pad_l, pad_r, pad_t, pad_b = 42, 14, 18, 34
    colors = ["#1f4e9c", "#c23b22", "#2d7f3a", "#7a4ba0"]
    t_max = max((max(ts) if len(ts) else 1.0) for _, ts, _ in curves)
    if t_max <= 0:
        t_max = 1.0
    x0, x1 = pad_l, width - pad_r
    y0, y1 = height - pad_b, pad_t

    def sx(t):
        return x0 + (t / t_max) * (x1 - x0)

    def sy(s):
        return y0 + s * (y1 - y0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333" stroke-width="1"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333" stroke-width="1"/>',
        f'<text x="{x0 - 6}" y="{sy(1.0) + 4}" font-size="9" text-anchor="end" '
        f'font-family="sans-serif">1.0</text>',
        f'<text x="{x0 - 6}" y="{sy(0.0) + 4}" font-size="9" text-anchor="end" '
        f'font-family="sans-serif">0.0</text>',
        f'<text x="{x1}" y="{y0 + 14}" font-size="9" text-anchor="end" '
        f'font-family="sans-serif">{_f(t_max)}</text>',
    ]
    for k, (label, times, probs) in enumerate(curves):
        color = colors[k % len(colors)]
        d = [f"M {_f(sx(0))} {_f(sy(1.0))}"]
        s_prev = 1.0
        for t, s in zip(times, probs):
            d.append(f"L {_f(sx(t))} {_f(sy(s_prev))}")
            d.append(f"L {_f(sx(t))} {_f(sy(s))}")
            s_prev = s
        d.append(f"L {_f(sx(t_max))} {_f(sy(s_prev))}")
        parts.append(
            f'<path d="{" ".join(d)}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        parts.append(
            f'<text x="{x1 - 4}" y="{y1 + 12 + 12 * k}" font-size="10" '
            f'text-anchor="end" font-family="sans-serif" fill="{color}">{label}</text>'
        )
    if caption:
        parts.append(
            f'<text x="{x0}" y="{height - 8}" font-size="10" '
            f'font-family="sans-serif" fill="#333">{caption}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
