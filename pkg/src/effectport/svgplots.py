"""Self-contained SVG emission for forest plots, conditional-effect panels,
and corpus scatter plots.

Plain text output with fixed number formatting, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

from .bglmm import ConditionalCurve
from .corpus import CorpusAnalysis
from .meta import ReMetaFit
from .tables import EffectKind

FONT = "font-family='monospace' font-size='11'"


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _line(x1, y1, x2, y2, stroke="#444", width=1.0, dash=None) -> str:
    dash_attr = f" stroke-dasharray='{dash}'" if dash else ""
    return (
        f"<line x1='{_fmt(x1)}' y1='{_fmt(y1)}' x2='{_fmt(x2)}' y2='{_fmt(y2)}' "
        f"stroke='{stroke}' stroke-width='{width}'{dash_attr}/>"
    )


def _rect(x, y, w, h, fill) -> str:
    return (
        f"<rect x='{_fmt(x)}' y='{_fmt(y)}' width='{_fmt(w)}' height='{_fmt(h)}' "
        f"fill='{fill}'/>"
    )


def _circle(x, y, r, fill) -> str:
    return f"<circle cx='{_fmt(x)}' cy='{_fmt(y)}' r='{_fmt(r)}' fill='{fill}'/>"


def _text(x, y, content, anchor="start", fill="#000") -> str:
    return (
        f"<text x='{_fmt(x)}' y='{_fmt(y)}' {FONT} text-anchor='{anchor}' "
        f"fill='{fill}'>{content}</text>"
    )


def _polygon(points: Sequence[tuple[float, float]], fill) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    return f"<polygon points='{coords}' fill='{fill}'/>"


def _polyline(points: Sequence[tuple[float, float]], stroke, width=1.5) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    return (
        f"<polyline points='{coords}' fill='none' stroke='{stroke}' "
        f"stroke-width='{width}'/>"
    )


def _document(width: int, height: int, elements: Sequence[str]) -> str:
    body = "\n".join(elements)
    return (
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' "
        f"height='{height}' viewBox='0 0 {width} {height}'>\n"
        f"<rect width='{width}' height='{height}' fill='white'/>\n"
        f"{body}\n</svg>\n"
    )


class _Scale:
    """Affine map from data coordinates to pixels."""

    def __init__(self, lo: float, hi: float, pix_lo: float, pix_hi: float):
        if hi <= lo:
            hi = lo + 1.0
        self.lo, self.hi = lo, hi
        self.pix_lo, self.pix_hi = pix_lo, pix_hi

    def __call__(self, value: float) -> float:
        t = (value - self.lo) / (self.hi - self.lo)
        return self.pix_lo + t * (self.pix_hi - self.pix_lo)


def forest_svg(fit: ReMetaFit, labels: Sequence[str] | None = None) -> str:
    """Study estimates with intervals plus the pooled diamond."""
    kind = fit.kind
    labels = list(labels) if labels else [f"study {i + 1}" for i in range(fit.k)]
    z = 1.959963984540054  # 95% display interval for the per-study rows
    rows = []
    for y, v in zip(fit.y, fit.v):
        half = z * math.sqrt(v)
        rows.append((y, y - half, y + half))
    pooled_t = fit.pooled.point_t
    pooled_lo = math.log(fit.pooled.ci_low) if kind.is_ratio else fit.pooled.ci_low
    pooled_hi = math.log(fit.pooled.ci_high) if kind.is_ratio else fit.pooled.ci_high

    lo = min(min(r[1] for r in rows), pooled_lo)
    hi = max(max(r[2] for r in rows), pooled_hi)
    pad = 0.05 * (hi - lo or 1.0)
    scale = _Scale(lo - pad, hi + pad, 170, 470)

    row_height = 26
    top = 48
    height = top + row_height * (fit.k + 2) + 46
    elements = [
        _text(16, 24, f"Random-effects meta-analysis ({kind.value.upper()}, "
                      f"{fit.method.value}, tau2={fit.tau2:.4f})"),
    ]
    null_t = 0.0  # log(1) for ratios, 0 for differences
    axis_y = top + row_height * (fit.k + 2)
    elements.append(_line(scale(null_t), top - 10, scale(null_t), axis_y, "#999", dash="4,3"))

    def display(value: float) -> float:
        return math.exp(value) if kind.is_ratio else value

    for i, ((y, lo_i, hi_i), label) in enumerate(zip(rows, labels)):
        cy = top + row_height * i + row_height / 2
        elements.append(_text(16, cy + 4, label))
        elements.append(_line(scale(lo_i), cy, scale(hi_i), cy, "#222"))
        elements.append(_rect(scale(y) - 4, cy - 4, 8, 8, "#224488"))
        elements.append(
            _text(
                486,
                cy + 4,
                f"{display(y):.2f} ({display(lo_i):.2f}, {display(hi_i):.2f})",
            )
        )
    cy = top + row_height * (fit.k + 1) + row_height / 2
    elements.append(_text(16, cy + 4, "pooled"))
    diamond = [
        (scale(pooled_lo), cy),
        (scale(pooled_t), cy - 7),
        (scale(pooled_hi), cy),
        (scale(pooled_t), cy + 7),
    ]
    elements.append(_polygon(diamond, "#882222"))
    elements.append(
        _text(
            486,
            cy + 4,
            f"{fit.pooled.point:.2f} ({fit.pooled.ci_low:.2f}, {fit.pooled.ci_high:.2f})",
        )
    )
    elements.append(_line(170, axis_y, 470, axis_y, "#000"))
    for tick in (lo, null_t, hi):
        elements.append(_line(scale(tick), axis_y, scale(tick), axis_y + 5, "#000"))
        elements.append(_text(scale(tick), axis_y + 18, _fmt(display(tick)), anchor="middle"))
    elements.append(_text(320, axis_y + 34, kind.value.upper(), anchor="middle"))
    return _document(660, height, elements)


def _panel(
    curve: ConditionalCurve,
    points: Sequence[tuple[float, float]],
    origin_x: float,
    origin_y: float,
    size: tuple[float, float] = (280.0, 240.0),
) -> list[str]:
    width, height = size
    kind = curve.kind
    log_scale = kind.is_ratio

    def to_axis(value: float) -> float:
        return math.log10(value) if log_scale else value

    values = [to_axis(v) for v in curve.values]
    pools = list(values) + [to_axis(v) for _, v in points if not log_scale or v > 0]
    if curve.pred_low is not None:
        pools += [to_axis(v) for v in curve.pred_low if not log_scale or v > 0]
        pools += [to_axis(v) for v in curve.pred_high]
    y_lo, y_hi = min(pools), max(pools)
    pad = 0.08 * (y_hi - y_lo or 1.0)
    y_scale = _Scale(y_lo - pad, y_hi + pad, origin_y + height, origin_y)
    x_lo, x_hi = min(curve.grid), max(curve.grid)
    if points:
        x_lo = min(x_lo, min(p for p, _ in points))
        x_hi = max(x_hi, max(p for p, _ in points))
    x_scale = _Scale(x_lo, x_hi, origin_x, origin_x + width)

    elements = [
        _text(origin_x, origin_y - 10, f"{kind.value.upper()} vs baseline risk"),
        _line(origin_x, origin_y, origin_x, origin_y + height, "#000"),
        _line(origin_x, origin_y + height, origin_x + width, origin_y + height, "#000"),
    ]

    def band(low, high, fill):
        top_points = [(x_scale(g), y_scale(to_axis(v))) for g, v in zip(curve.grid, high)]
        bottom = [(x_scale(g), y_scale(to_axis(v))) for g, v in zip(curve.grid, low)]
        elements.append(_polygon(top_points + bottom[::-1], fill))

    if curve.pred_low is not None:
        band(curve.pred_low, curve.pred_high, "#e4e4ee")
    if curve.comp_low is not None:
        band(curve.comp_low, curve.comp_high, "#c2c2dd")
    null_axis = to_axis(kind.null) if (not log_scale or kind.null > 0) else None
    if null_axis is not None and y_lo - pad < null_axis < y_hi + pad:
        elements.append(
            _line(origin_x, y_scale(null_axis), origin_x + width, y_scale(null_axis),
                  "#999", dash="4,3")
        )
    elements.append(
        _polyline(
            [(x_scale(g), y_scale(v)) for g, v in zip(curve.grid, values)], "#224488"
        )
    )
    for p0, value in points:
        if log_scale and value <= 0:
            continue
        elements.append(_circle(x_scale(p0), y_scale(to_axis(value)), 2.5, "#882222"))
    for tick in (x_lo, (x_lo + x_hi) / 2, x_hi):
        elements.append(
            _line(x_scale(tick), origin_y + height, x_scale(tick), origin_y + height + 5, "#000")
        )
        elements.append(
            _text(x_scale(tick), origin_y + height + 17, _fmt(tick), anchor="middle")
        )
    for tick in (y_lo, (y_lo + y_hi) / 2, y_hi):
        label = 10**tick if log_scale else tick
        elements.append(_line(origin_x - 5, y_scale(tick), origin_x, y_scale(tick), "#000"))
        elements.append(_text(origin_x - 8, y_scale(tick) + 4, _fmt(label), anchor="end"))
    return elements


def conditional_panels_svg(
    curves: Sequence[ConditionalCurve],
    observed: Mapping[EffectKind, Sequence[tuple[float, float]]] | None = None,
) -> str:
    """One panel per curve (OR/RR/RD), with observed study points overlaid."""
    observed = observed or {}
    elements: list[str] = []
    panel_width, gap, margin = 280.0, 70.0, 60.0
    for i, curve in enumerate(curves):
        origin_x = margin + i * (panel_width + gap)
        elements += _panel(
            curve, list(observed.get(curve.kind, ())), origin_x, 40.0
        )
    total_width = int(margin + len(curves) * (panel_width + gap))
    return _document(total_width, 340, elements)


def corpus_scatter_svg(analysis: CorpusAnalysis) -> str:
    """OR-correlation versus RR-correlation per stratum, with OLS lines."""
    size = 300.0
    margin = 60.0
    gap = 60.0
    panels = []
    for summary in analysis.summaries:
        if summary.stratum.startswith("k>="):
            split = int(summary.stratum.split(">=")[1])
            records = [r for r in analysis.records if r.k >= split]
        else:
            bounds = summary.stratum.split("<=k<")
            records = [
                r for r in analysis.records if int(bounds[0]) <= r.k < int(bounds[1])
            ]
        panels.append((summary, records))

    elements: list[str] = []
    for i, (summary, records) in enumerate(panels):
        ox = margin + i * (size + gap)
        oy = 50.0
        x_scale = _Scale(-1.0, 1.0, ox, ox + size)
        y_scale = _Scale(-1.0, 1.0, oy + size, oy)
        elements.append(_text(ox, oy - 12, f"{summary.stratum} (n={summary.n_meta})"))
        elements.append(_line(ox, oy, ox, oy + size, "#000"))
        elements.append(_line(ox, oy + size, ox + size, oy + size, "#000"))
        elements.append(_line(x_scale(-1), y_scale(-1), x_scale(1), y_scale(1), "#999", dash="4,3"))
        elements.append(_line(x_scale(0), oy, x_scale(0), oy + size, "#ccc"))
        elements.append(_line(ox, y_scale(0), ox + size, y_scale(0), "#ccc"))
        for record in records:
            if record.rho_or is None or record.rho_rr is None:
                continue
            elements.append(
                _circle(x_scale(record.rho_or.rho), y_scale(record.rho_rr.rho), 2, "#224488")
            )
        if summary.slope is not None:
            y_left = summary.intercept + summary.slope * -1.0
            y_right = summary.intercept + summary.slope * 1.0
            clipped = [
                (x, max(-1.0, min(1.0, y))) for x, y in ((-1.0, y_left), (1.0, y_right))
            ]
            elements.append(
                _polyline([(x_scale(x), y_scale(y)) for x, y in clipped], "#dd8800", 2.0)
            )
        for tick in (-1.0, 0.0, 1.0):
            elements.append(_text(x_scale(tick), oy + size + 16, _fmt(tick), anchor="middle"))
            elements.append(_text(ox - 8, y_scale(tick) + 4, _fmt(tick), anchor="end"))
        elements.append(
            _text(ox + size / 2, oy + size + 32, "Spearman rho (OR)", anchor="middle")
        )
    height = int(50 + size + 50)
    width = int(margin + len(panels) * (size + gap))
    return _document(width, height, elements)
