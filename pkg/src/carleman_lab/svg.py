"""Standalone SVG line plots.

Fixed canvas, one polyline per series, no external assets and no
plotting dependency.  Coordinates are rounded to 1/100 px so repeated
runs emit identical bytes.
"""

from __future__ import annotations

import math

WIDTH, HEIGHT = 640.0, 420.0
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70.0, 20.0, 40.0, 50.0
PALETTE = ("#1f5fa8", "#c24d2c", "#3b7d3b", "#7a4fa3", "#8a6d1a")


class PlotError(ValueError):
    pass


def _axis_range(values, log):
    vals = [v for v in values if not log or v > 0.0]
    if not vals:
        raise PlotError("no plottable values (log axis needs positives)")
    f = math.log10 if log else float
    lo, hi = f(min(vals)), f(max(vals))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _fmt_tick(v, log):
    return f"{10.0 ** v:.3g}" if log else f"{v:.3g}"


def line_plot(path, series, title="", xlabel="", ylabel="",
              logx=False, logy=False):
    """series: list of (label, xs, ys); lengths must match per series."""
    if not series:
        raise PlotError("empty series list")
    for label, xs, ys in series:
        if len(xs) != len(ys) or not len(xs):
            raise PlotError(f"series {label!r}: need equal nonzero lengths")
    fx = math.log10 if logx else float
    fy = math.log10 if logy else float
    x_lo, x_hi = _axis_range([x for _, xs, _ in series for x in xs], logx)
    y_lo, y_hi = _axis_range([y for _, _, ys in series for y in ys], logy)

    def px(v):
        t = (fx(v) - x_lo) / (x_hi - x_lo)
        return MARGIN_L + t * (WIDTH - MARGIN_L - MARGIN_R)

    def py(v):
        t = (fy(v) - y_lo) / (y_hi - y_lo)
        return HEIGHT - MARGIN_B - t * (HEIGHT - MARGIN_T - MARGIN_B)

    x_axis_y = HEIGHT - MARGIN_B
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0f}" '
        f'height="{HEIGHT:.0f}" viewBox="0 0 {WIDTH:.0f} {HEIGHT:.0f}">',
        f'<rect width="{WIDTH:.0f}" height="{HEIGHT:.0f}" fill="white"/>',
        f'<line x1="{MARGIN_L:.2f}" y1="{x_axis_y:.2f}" '
        f'x2="{WIDTH - MARGIN_R:.2f}" y2="{x_axis_y:.2f}" stroke="black"/>',
        f'<line x1="{MARGIN_L:.2f}" y1="{MARGIN_T:.2f}" '
        f'x2="{MARGIN_L:.2f}" y2="{x_axis_y:.2f}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.2f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<text x="{WIDTH / 2:.2f}" y="{HEIGHT - 12:.2f}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        f'{xlabel}</text>',
        f'<text x="16" y="{HEIGHT / 2:.2f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {HEIGHT / 2:.2f})">{ylabel}</text>',
    ]
    for value, anchor, xpix in ((x_lo, "start", MARGIN_L),
                                (x_hi, "end", WIDTH - MARGIN_R)):
        parts.append(
            f'<text x="{xpix:.2f}" y="{x_axis_y + 18:.2f}" '
            f'text-anchor="{anchor}" font-family="sans-serif" '
            f'font-size="11">{_fmt_tick(value, logx)}</text>')
    for value, ypix in ((y_lo, x_axis_y), (y_hi, MARGIN_T)):
        parts.append(
            f'<text x="{MARGIN_L - 6:.2f}" y="{ypix + 4:.2f}" '
            f'text-anchor="end" font-family="sans-serif" font-size="11">'
            f'{_fmt_tick(value, logy)}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys)
                       if not (logx and x <= 0.0) and not (logy and y <= 0.0))
        parts.append(f'<polyline fill="none" stroke="{color}" '
                     f'stroke-width="1.5" points="{pts}"/>')
        if label:
            parts.append(
                f'<text x="{WIDTH - MARGIN_R - 4:.2f}" '
                f'y="{MARGIN_T + 14 + 14 * i:.2f}" text-anchor="end" '
                f'font-family="sans-serif" font-size="11" '
                f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
