"""Minimal deterministic SVG 1.1 emitter for log-log line plots.

No plotting dependency: axes, decade ticks, polyline series with markers and a
legend carrying least-squares slopes of log y against log x.
"""

from __future__ import annotations

import math

import numpy as np

_COLORS = ["#1f6fb4", "#d1495b", "#2e8b57", "#8a5fbf", "#c98a00"]

_W, _H = 720, 540
_ML, _MR, _MT, _MB = 90, 210, 40, 70


def _decades(lo: float, hi: float):
    k0 = math.floor(math.log10(lo) - 1e-12)
    k1 = math.ceil(math.log10(hi) + 1e-12)
    return [10.0**k for k in range(k0, k1 + 1)]


def _fit_slope(x, y) -> float:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    if len(lx) < 2:
        return float("nan")
    return float(np.polyfit(lx, ly, 1)[0])


def loglog_plot(path, series, xlabel: str, ylabel: str, title: str = "",
                annotate_slopes: bool = True) -> None:
    """Write a log-log plot; ``series`` maps label -> (x array, y array)."""
    finite = []
    for xs, ys in series.values():
        for x, y in zip(xs, ys):
            if x > 0 and y > 0 and np.isfinite(x) and np.isfinite(y):
                finite.append((x, y))
    if not finite:
        raise ValueError("nothing positive to plot on log axes")
    xmin = min(p[0] for p in finite)
    xmax = max(p[0] for p in finite)
    ymin = min(p[1] for p in finite)
    ymax = max(p[1] for p in finite)

    def expand(lo, hi):
        if lo == hi:
            return lo * 0.5, hi * 2.0
        pad = (math.log10(hi) - math.log10(lo)) * 0.08
        return 10 ** (math.log10(lo) - pad), 10 ** (math.log10(hi) + pad)

    xmin, xmax = expand(xmin, xmax)
    ymin, ymax = expand(ymin, ymax)

    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def px(x):
        return _ML + pw * (math.log10(x) - math.log10(xmin)) / (math.log10(xmax) - math.log10(xmin))

    def py(y):
        return _MT + ph * (math.log10(ymax) - math.log10(y)) / (math.log10(ymax) - math.log10(ymin))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="Helvetica, Arial, sans-serif">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    if title:
        out.append(
            f'<text x="{_ML + pw / 2:.1f}" y="{_MT - 14}" text-anchor="middle" '
            f'font-size="15">{title}</text>'
        )

    for tick in _decades(xmin, xmax):
        if not (xmin <= tick <= xmax):
            continue
        x = px(tick)
        out.append(
            f'<line x1="{x:.2f}" y1="{_MT}" x2="{x:.2f}" y2="{_MT + ph}" '
            'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{x:.2f}" y="{_MT + ph + 18}" text-anchor="middle" font-size="12">'
            f"1e{int(round(math.log10(tick)))}</text>"
        )
    for tick in _decades(ymin, ymax):
        if not (ymin <= tick <= ymax):
            continue
        y = py(tick)
        out.append(
            f'<line x1="{_ML}" y1="{y:.2f}" x2="{_ML + pw}" y2="{y:.2f}" '
            'stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_ML - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="12">'
            f"1e{int(round(math.log10(tick)))}</text>"
        )

    out.append(
        f'<text x="{_ML + pw / 2:.1f}" y="{_H - 18}" text-anchor="middle" font-size="13">'
        f"{xlabel}</text>"
    )
    out.append(
        f'<text x="24" y="{_MT + ph / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 24 {_MT + ph / 2:.1f})">{ylabel}</text>'
    )

    legend_y = _MT + 16
    for k, (label, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        pts = [
            (px(x), py(y))
            for x, y in zip(xs, ys)
            if x > 0 and y > 0 and np.isfinite(x) and np.isfinite(y)
        ]
        if not pts:
            continue
        path_d = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        out.append(
            f'<polyline points="{path_d}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
        for x, y in pts:
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3.2" fill="{color}"/>')
        text = label
        if annotate_slopes:
            slope = _fit_slope(
                [x for x, y in zip(xs, ys) if x > 0 and y > 0],
                [y for x, y in zip(xs, ys) if x > 0 and y > 0],
            )
            text += f" (slope {slope:+.2f})"
        lx = _ML + pw + 14
        out.append(
            f'<line x1="{lx}" y1="{legend_y - 4}" x2="{lx + 22}" y2="{legend_y - 4}" '
            f'stroke="{color}" stroke-width="2.5"/>'
        )
        out.append(
            f'<text x="{lx + 28}" y="{legend_y}" font-size="12">{text}</text>'
        )
        legend_y += 20

    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(out) + "\n")
