"""Axis localization, tick-range inference, and pixel<->data calibration.

Axis strokes are found by projecting ink density along columns and rows:
the leftmost column and bottommost row whose foreground fraction (within
the ink bounding box) reaches ``INK_FRACTION_THRESHOLD`` are taken as the
y- and x-axis baselines. Calibration is the affine map fixed by the axis
endpoint pixels and the axis min/max values; tick increments are kept for
metadata validation, not for the map itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import DegenerateAxis, DegenerateTicks, InsufficientTicks, NoAxisFound
from .raster import RasterImage, luminance

INK_FRACTION_THRESHOLD = 0.5  # of ink-bbox height/width for an axis stroke
INK_LIGHTNESS_CUTOFF = 0.5  # lightness below this counts as ink
MARGIN_FRACTION = 0.05  # stroke ends where foreground fraction falls below this


@dataclass(frozen=True)
class AxisGeometry:
    """Pixel endpoints of the two axis baselines plus interior margins."""

    u_x0: int  # column of the y-axis stroke (left end of the x span)
    u_x1: int  # rightmost column of the x-axis stroke
    v_y0: int  # topmost row of the y-axis stroke
    v_y1: int  # row of the x-axis stroke (bottom end of the y span)
    margin_left: int = 0  # y-axis stroke thickness toward the interior
    margin_bottom: int = 0  # x-axis stroke thickness toward the interior

    def __post_init__(self):
        if self.u_x1 <= self.u_x0:
            raise ValueError("u_x1 must exceed u_x0")
        if self.v_y1 <= self.v_y0:
            raise ValueError("v_y1 must exceed v_y0")


@dataclass(frozen=True)
class AxisRange:
    """Numeric span of one axis: [min, max] with the label increment."""

    min: float
    max: float
    increment: float

    def __post_init__(self):
        if not self.max > self.min:
            raise ValueError("max must exceed min")
        if not self.increment > 0:
            raise ValueError("increment must be positive")
        if self.increment > (self.max - self.min) * (1 + 1e-12):
            raise ValueError("increment exceeds the axis span")


@dataclass(frozen=True)
class TickToken:
    """One OCR token near an axis."""

    text: str
    numeric_value: float | None
    center: tuple[float, float]  # (u, v)
    box: tuple[int, int, int, int]  # (u0, v0, u1, v1), exclusive right/bottom

    def __post_init__(self):
        u0, v0, u1, v1 = self.box
        cu, cv = self.center
        if not (u0 <= cu <= u1 and v0 <= cv <= v1):
            raise ValueError("token box must contain its center")


def _ink_mask(image: RasterImage) -> np.ndarray:
    return luminance(image) < INK_LIGHTNESS_CUTOFF


def locate_axes(image: RasterImage) -> AxisGeometry:
    """Find the L-shaped axis frame from ink-density projections."""
    ink = _ink_mask(image)
    if not ink.any():
        raise NoAxisFound("image contains no ink")

    rows_any = np.flatnonzero(ink.any(axis=1))
    cols_any = np.flatnonzero(ink.any(axis=0))
    top, bottom = rows_any[0], rows_any[-1]
    left, right = cols_any[0], cols_any[-1]
    box = ink[top : bottom + 1, left : right + 1]
    box_h, box_w = box.shape

    col_frac = box.sum(axis=0) / box_h
    row_frac = box.sum(axis=1) / box_w
    col_hits = np.flatnonzero(col_frac >= INK_FRACTION_THRESHOLD)
    row_hits = np.flatnonzero(row_frac >= INK_FRACTION_THRESHOLD)
    if col_hits.size == 0 or row_hits.size == 0:
        raise NoAxisFound("no column/row reaches the ink-density threshold")

    u_x0 = int(left + col_hits[0])  # leftmost qualifying column
    v_y1 = int(top + row_hits[-1])  # bottommost qualifying row

    axis_row = ink[v_y1]
    axis_col = ink[:, u_x0]
    u_x1 = int(np.flatnonzero(axis_row)[-1])
    v_y0 = int(np.flatnonzero(axis_col)[0])
    if u_x1 <= u_x0 or v_y1 <= v_y0:
        raise NoAxisFound("axis strokes do not form an L frame")

    # Stroke thickness toward the interior: advance until the foreground
    # fraction of the column/row falls below MARGIN_FRACTION.
    margin_left = 0
    u = u_x0 + 1
    while u < u_x1 and col_frac[u - left] >= MARGIN_FRACTION:
        margin_left += 1
        u += 1
    margin_bottom = 0
    v = v_y1 - 1
    while v > v_y0 and row_frac[v - top] >= MARGIN_FRACTION:
        margin_bottom += 1
        v -= 1

    return AxisGeometry(
        u_x0=u_x0,
        u_x1=u_x1,
        v_y0=v_y0,
        v_y1=v_y1,
        margin_left=margin_left,
        margin_bottom=margin_bottom,
    )


def _gap_groups(gaps: np.ndarray) -> dict[float, int]:
    """Count gaps grouped by value (rounded to 9 significant digits)."""
    counts: dict[float, int] = {}
    for g in gaps:
        key = float(np.format_float_positional(g, precision=9, fractional=False))
        counts[key] = counts.get(key, 0) + 1
    return counts


def detect_ranges(tokens: Sequence[TickToken], axis: Literal["x", "y"]) -> AxisRange:
    """Infer min/max/increment from numeric tick tokens.

    The increment is the mode of the pairwise gaps between sorted unique
    values, taken over a 10%-trimmed gap list with ties broken toward the
    smaller gap. If the gaps are irregular (no repeated gap) or the values
    are non-monotonic along the axis direction, the median gap is used.
    """
    numeric = [t for t in tokens if t.numeric_value is not None]
    coord = 0 if axis == "x" else 1
    numeric.sort(key=lambda t: (t.center[coord], t.numeric_value))
    values = np.array([t.numeric_value for t in numeric], dtype=float)
    unique = np.unique(values)
    if unique.size < 2:
        raise InsufficientTicks(f"need >= 2 distinct numeric ticks, got {unique.size}")
    gaps = np.diff(unique)
    span = float(unique[-1] - unique[0])
    if span <= 1e-12 * max(1.0, abs(float(unique[-1]))):
        raise DegenerateTicks("tick values have (numerically) zero span")

    # Values sorted by pixel position must run monotonically along the axis;
    # anything else is an irregular sequence.
    diffs = np.diff(values)
    monotonic = bool(np.all(diffs >= 0) or np.all(diffs <= 0))

    trim = int(np.floor(0.10 * gaps.size))
    trimmed = np.sort(gaps)
    if trim > 0 and gaps.size - 2 * trim >= 1:
        trimmed = trimmed[trim : gaps.size - trim]
    counts = _gap_groups(trimmed)
    best_count = max(counts.values())
    if monotonic and best_count >= 2:
        increment = min(g for g, c in counts.items() if c == best_count)
    else:
        increment = float(np.median(gaps))
    return AxisRange(min=float(unique[0]), max=float(unique[-1]), increment=float(increment))


def calibrate(
    u: float,
    v: float,
    geom: AxisGeometry,
    x: AxisRange,
    y: AxisRange,
) -> tuple[float, float]:
    """Map a pixel (u, v) to (time, survival) via the endpoint affine."""
    du = geom.u_x1 - geom.u_x0
    dv = geom.v_y1 - geom.v_y0
    if du == 0 or dv == 0 or x.max == x.min or y.max == y.min:
        raise DegenerateAxis("zero-length axis span")
    t = x.min + (u - geom.u_x0) / du * (x.max - x.min)
    s = y.max - (v - geom.v_y0) / dv * (y.max - y.min)
    return t, s


def inverse_calibrate(
    t: float,
    s: float,
    geom: AxisGeometry,
    x: AxisRange,
    y: AxisRange,
) -> tuple[float, float]:
    """Map (time, survival) back to fractional pixel coordinates."""
    du = geom.u_x1 - geom.u_x0
    dv = geom.v_y1 - geom.v_y0
    if du == 0 or dv == 0 or x.max == x.min or y.max == y.min:
        raise DegenerateAxis("zero-length axis span")
    u = geom.u_x0 + (t - x.min) / (x.max - x.min) * du
    v = geom.v_y0 + (y.max - s) / (y.max - y.min) * dv
    return u, v


def calibrate_array(
    uv: np.ndarray,
    geom: AxisGeometry,
    x: AxisRange,
    y: AxisRange,
) -> np.ndarray:
    """Vectorized calibrate over an (n, 2) array of (u, v) pixels."""
    uv = np.asarray(uv, dtype=float)
    du = geom.u_x1 - geom.u_x0
    dv = geom.v_y1 - geom.v_y0
    if du == 0 or dv == 0 or x.max == x.min or y.max == y.min:
        raise DegenerateAxis("zero-length axis span")
    t = x.min + (uv[:, 0] - geom.u_x0) / du * (x.max - x.min)
    s = y.max - (uv[:, 1] - geom.v_y0) / dv * (y.max - y.min)
    return np.column_stack([t, s])
