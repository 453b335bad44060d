"""Minimal SVG line-plot writer so sweep results can be visualized
without a plotting dependency."""

from __future__ import annotations

import math
from pathlib import Path

_PALETTE = ("#1f6fb4", "#d1495b", "#3c8d40", "#8e5fa8", "#c87f2f", "#4aa3a2")


def _ticks(lo: float, hi: float, n: int = 5) -> list:
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    span = hi - lo
    step = 10 ** math.floor(math.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + step * 1e-9:
        out.append(round(v, 12))
        v += step
    return out


def svg_line_plot(path, series: list, xlabel: str = "", ylabel: str = "",
                  title: str = "", width: int = 720, height: int = 480,
                  logx: bool = False, logy: bool = False) -> None:
    """Write a line plot. ``series`` is a list of (label, xs, ys)."""
    ml, mr, mt, mb = 70, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb

    def tx(vals):
        return [math.log10(v) for v in vals] if logx else list(vals)

    def ty(vals):
        return [math.log10(v) for v in vals] if logy else list(vals)

    all_x = [v for _, xs, _ in series for v in tx(xs)]
    all_y = [v for _, _, ys in series for v in ty(ys) if math.isfinite(v)]
    if not all_x or not all_y:
        raise ValueError("nothing to plot")
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = min(all_y), max(all_y)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
                     f'font-size="14">{title}</text>')
    parts.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" '
                 'stroke="black"/>')
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" '
                 'stroke="black"/>')
    for t in _ticks(x0, x1):
        x = px(t)
        label = f"1e{t:g}" if logx else f"{t:g}"
        parts.append(f'<line x1="{x:.1f}" y1="{mt + ph}" x2="{x:.1f}" '
                     f'y2="{mt + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{mt + ph + 18}" text-anchor="middle" '
                     f'font-size="11">{label}</text>')
    for t in _ticks(y0, y1):
        y = py(t)
        label = f"1e{t:g}" if logy else f"{t:g}"
        parts.append(f'<line x1="{ml - 5}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{label}</text>')
    if xlabel:
        parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" '
                     f'text-anchor="middle" font-size="12">{xlabel}</text>')
    if ylabel:
        parts.append(f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                     f'font-size="12" transform="rotate(-90 16 {mt + ph / 2:.1f})">'
                     f'{ylabel}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}"
                       for x, y in zip(tx(xs), ty(ys)) if math.isfinite(y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     'stroke-width="1.5"/>')
        if label:
            ly = mt + 14 + 16 * i
            parts.append(f'<line x1="{ml + pw - 120}" y1="{ly - 4}" '
                         f'x2="{ml + pw - 100}" y2="{ly - 4}" stroke="{color}" '
                         'stroke-width="1.5"/>')
            parts.append(f'<text x="{ml + pw - 94}" y="{ly}" font-size="11">'
                         f'{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
