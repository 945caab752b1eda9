"""Deterministic Kaplan-Meier plot rendering for round-trip benchmarks.

Draws step curves, an L-shaped axis frame, tick labels, a legend, and a
number-at-risk table with PIL primitives and the bundled bitmap font, so
identical inputs produce byte-identical PNGs. The emitted ground-truth
metadata doubles as the sidecar for offline pipeline runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .metadata import GroupInfo, PlotMetadata, RiskTable
from .raster import RasterImage
from .survival import IPDRecord, SurvivalCurve, km_estimate, risk_counts

# Hues kept well inside (0.1, 0.9): resampling noise around pure red wraps
# across the hue seam and breaks Euclidean color clustering.
PALETTE = [
    (30, 60, 200),  # blue, h ~ 0.64
    (20, 150, 60),  # green, h ~ 0.39
    (120, 60, 200),  # purple, h ~ 0.74
    (200, 160, 30),  # gold, h ~ 0.13
]
NICE_INCREMENTS = [0.5, 1.0, 2.0, 3.0, 6.0, 12.0, 24.0, 36.0, 48.0, 60.0, 120.0]


@dataclass(frozen=True)
class RenderStyle:
    width: int = 800
    height: int = 560
    margin_left: int = 80
    margin_right: int = 40
    margin_top: int = 30
    line_width: int = 3
    tick_len: int = 4
    label_pad: int = 4
    risk_row_height: int = 16
    draw_legend: bool = True
    draw_risk_table: bool = True
    censor_marks: bool = False
    colors: tuple[tuple[int, int, int], ...] = tuple(PALETTE)


@dataclass(frozen=True)
class RenderResult:
    image: RasterImage
    risk_table: RiskTable
    truth: dict[str, SurvivalCurve]
    metadata: PlotMetadata
    plot_box: tuple[int, int, int, int] = field(default=None)  # (L, T, R, B)


def choose_time_grid(t_max: float, max_ticks: int = 7) -> tuple[float, float]:
    """Pick a label increment and axis end covering t_max with few ticks."""
    for inc in NICE_INCREMENTS:
        if math.ceil(t_max / inc) <= max_ticks - 1:
            return inc, math.ceil(t_max / inc) * inc
    inc = NICE_INCREMENTS[-1]
    return inc, math.ceil(t_max / inc) * inc


def _fmt_time(value: float, increment: float) -> str:
    if float(increment).is_integer() and float(value).is_integer():
        return str(int(value))
    return format(value, ".3g")


def _text_size(draw: ImageDraw.ImageDraw, text: str, font) -> tuple[int, int]:
    x0, y0, x1, y1 = draw.textbbox((0, 0), text, font=font)
    return x1 - x0, y1 - y0


def _curve_polyline(curve: SurvivalCurve, t_end: float) -> list[tuple[float, float]]:
    """Step polyline (t, s) from (0, 1) through each drop to t_end."""
    pts = [(0.0, 1.0)]
    s_prev = 1.0
    for t, s in zip(curve.step_times, curve.probabilities):
        pts.append((float(t), s_prev))
        pts.append((float(t), float(s)))
        s_prev = float(s)
    pts.append((t_end, s_prev))
    return pts


def render_km_plot(
    records_by_group: dict[str, list[IPDRecord]],
    style: RenderStyle | None = None,
) -> RenderResult:
    """Render KM curves with a risk table; returns image plus ground truth."""
    if not records_by_group:
        raise ValueError("need at least one group")
    style = style or RenderStyle()
    groups = list(records_by_group)
    truth = {g: km_estimate(records_by_group[g]) for g in groups}

    t_obs_max = max(r.time for recs in records_by_group.values() for r in recs)
    x_inc, x_end = choose_time_grid(t_obs_max)
    anchors = [i * x_inc for i in range(int(round(x_end / x_inc)) + 1)]
    y_inc = 0.2
    y_vals = [round(i * y_inc, 10) for i in range(6)]

    counts = tuple(
        tuple(risk_counts(records_by_group[g], anchors)) for g in groups
    )
    risk = RiskTable(anchor_times=tuple(anchors), counts=counts)

    metadata = PlotMetadata(
        x_start=0.0,
        x_end=float(x_end),
        x_increment=float(x_inc),
        y_start=0.0,
        y_end=1.0,
        y_increment=y_inc,
        num_curves=len(groups),
        groups=tuple(
            GroupInfo(label=g, color_hint="#%02x%02x%02x" % style.colors[i % len(style.colors)])
            for i, g in enumerate(groups)
        ),
        risk_table=risk,
        time_unit="months",
    )

    # Plot frame: y-spine columns [L, L+1], x-spine rows [B-1, B]; the data
    # origin maps to pixel (L, B) so axis localization recovers it exactly.
    font = ImageFont.load_default()
    label_band = 16
    table_height = (len(groups) * style.risk_row_height + 10) if style.draw_risk_table else 0
    L = style.margin_left
    R = style.width - style.margin_right
    T = style.margin_top
    B = style.height - (style.tick_len + style.label_pad + label_band + table_height + 10)
    if B - T < 100 or R - L < 100:
        raise ValueError("style leaves too little room for the plot frame")

    def u_of(t: float) -> float:
        return L + (t - 0.0) / (x_end - 0.0) * (R - L)

    def v_of(s: float) -> float:
        return T + (1.0 - s) / 1.0 * (B - T)

    img = Image.new("RGB", (style.width, style.height), (255, 255, 255))
    draw = ImageDraw.Draw(img)

    # Curves first so the frame overdraws any contact pixels.
    for gi, g in enumerate(groups):
        color = style.colors[gi % len(style.colors)]
        t_last = max(r.time for r in records_by_group[g])
        poly = _curve_polyline(truth[g], t_last)
        pix = [(u_of(t), v_of(s)) for t, s in poly]
        draw.line(pix, fill=color, width=style.line_width, joint="curve")
        if style.censor_marks:
            curve = truth[g]
            for rec in records_by_group[g]:
                if rec.status == 0 and rec.time < t_last:
                    s_here = float(curve.evaluate([rec.time])[0])
                    u = u_of(rec.time)
                    v = v_of(s_here)
                    draw.line([(u, v - 4), (u, v + 4)], fill=color, width=1)

    draw.rectangle([L, T, L + 1, B], fill=(0, 0, 0))  # y spine
    draw.rectangle([L, B - 1, R, B], fill=(0, 0, 0))  # x spine

    for a in anchors:
        u = int(round(u_of(a)))
        draw.rectangle([u, B + 1, u + 1, B + style.tick_len], fill=(0, 0, 0))
        text = _fmt_time(a, x_inc)
        tw, _ = _text_size(draw, text, font)
        draw.text((u - tw // 2, B + style.tick_len + style.label_pad), text, fill=(0, 0, 0), font=font)
    for yv in y_vals:
        v = int(round(v_of(yv)))
        draw.rectangle([L - style.tick_len - 1, v, L - 1, v + 1], fill=(0, 0, 0))
        text = format(yv, ".1f")
        tw, th = _text_size(draw, text, font)
        draw.text((L - style.tick_len - style.label_pad - tw - 2, v - th // 2), text, fill=(0, 0, 0), font=font)

    if style.draw_legend:
        ly = T + 8
        for gi, g in enumerate(groups):
            color = style.colors[gi % len(style.colors)]
            tw, th = _text_size(draw, g, font)
            lx1 = R - 12
            lx0 = lx1 - tw - 26
            draw.line([(lx0, ly + th // 2), (lx0 + 18, ly + th // 2)], fill=color, width=style.line_width)
            draw.text((lx0 + 24, ly), g, fill=(0, 0, 0), font=font)
            ly += th + 6

    if style.draw_risk_table:
        ty = B + style.tick_len + style.label_pad + label_band + 6
        for gi, g in enumerate(groups):
            row_v = ty + gi * style.risk_row_height
            draw.text((6, row_v), g, fill=(0, 0, 0), font=font)
            for a, count in zip(anchors, counts[gi]):
                text = str(count)
                tw, _ = _text_size(draw, text, font)
                draw.text((int(round(u_of(a))) - tw // 2, row_v), text, fill=(0, 0, 0), font=font)

    return RenderResult(
        image=RasterImage.from_pil(img),
        risk_table=risk,
        truth=truth,
        metadata=metadata,
        plot_box=(L, T, R, B),
    )
