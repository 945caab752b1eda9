"""Curve pixel separation, path tracing, and overlap repair.

Pixels inside the plot frame are featurized in HSL, clustered into K
color groups with K-medoids, ordered into per-group paths by a greedy
nearest-neighbor walk constrained to (nearly) non-decreasing u, and
scored with a k-NN label-consensus statistic that flags entangled
regions for monotone re-interpolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import (
    InsufficientNeighbors,
    NoCurvePixels,
    TooFewPixels,
    UnresolvableOverlap,
)
from .geometry import AxisGeometry, AxisRange, calibrate_array
from .raster import RasterImage, rgb_to_hsl

LIGHTNESS_FLOOR = 0.2  # curve pixels must have l >= this
BACKGROUND_SHARE = 0.05  # quantized colors at least this frequent are background
QUANT_LEVELS = 32  # color quantization for background counting
AXIS_EXCLUSION_PX = 2  # pixels this close to an axis baseline are dropped
KMEDOIDS_RESTARTS = 5
KMEDOIDS_MAX_ITER = 100
MEDOID_SUBSAMPLE = 2048  # cap for the exact medoid-update search
CONSENSUS_EPS = 1e-10
CONSENSUS_K = 8
BACKTRACK_PX = 2  # how far u may decrease along a traced path
OUTLIER_JUMP_PX = 10.0  # greedy step longer than this ends the path


@dataclass(frozen=True)
class PixelFeatures:
    """Columnar pixel features: coordinates plus HSL color."""

    uv: np.ndarray  # (n, 2) int pixel coordinates (u, v)
    hsl: np.ndarray  # (n, 3) float, h in [0,1), s and l in [0,1]

    def __len__(self) -> int:
        return self.uv.shape[0]


@dataclass(frozen=True)
class CurveCluster:
    """One color group: member indices into the feature set plus its medoid."""

    label: int
    indices: np.ndarray  # indices into the PixelFeatures arrays
    medoid_index: int  # index into the PixelFeatures arrays

    def __post_init__(self):
        if self.medoid_index not in self.indices:
            raise ValueError("medoid must be a member of its cluster")


@dataclass(frozen=True)
class CurveTrace:
    """Calibrated polyline for one group with pixel provenance."""

    group: str
    points: np.ndarray  # (m, 2) calibrated (t, s)
    pixel_path: np.ndarray  # (p, 2) raw traced (u, v)
    scores: np.ndarray = field(default=None)  # per-point consensus scores

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "pixel_path", np.asarray(self.pixel_path, dtype=float))
        scores = self.scores
        if scores is None:
            scores = np.ones(self.points.shape[0])
        object.__setattr__(self, "scores", np.asarray(scores, dtype=float))


def extract_features(image: RasterImage, geom: AxisGeometry) -> PixelFeatures:
    """Collect interior non-background curve pixels with HSL features."""
    u_lo = geom.u_x0 + geom.margin_left + AXIS_EXCLUSION_PX + 1
    u_hi = geom.u_x1
    v_lo = geom.v_y0
    v_hi = geom.v_y1 - geom.margin_bottom - AXIS_EXCLUSION_PX - 1
    if u_lo > u_hi or v_lo > v_hi:
        raise NoCurvePixels("plot interior is empty")

    region = image.pixels[v_lo : v_hi + 1, u_lo : u_hi + 1]
    h, w = region.shape[:2]

    quant = (region.astype(np.int32) // (256 // QUANT_LEVELS))
    packed = (quant[..., 0] * QUANT_LEVELS + quant[..., 1]) * QUANT_LEVELS + quant[..., 2]
    colors, counts = np.unique(packed, return_counts=True)
    background = colors[counts >= BACKGROUND_SHARE * h * w]
    is_background = np.isin(packed, background)

    hsl = rgb_to_hsl(region)
    keep = (~is_background) & (hsl[..., 2] >= LIGHTNESS_FLOOR)
    vs, us = np.nonzero(keep)
    if us.size == 0:
        raise NoCurvePixels("no foreground pixels after background/lightness filters")
    uv = np.column_stack([us + u_lo, vs + v_lo]).astype(np.int64)
    return PixelFeatures(uv=uv, hsl=hsl[vs, us])


def _standardize(hsl: np.ndarray, enhanced: bool) -> np.ndarray:
    x = np.asarray(hsl, dtype=float).copy()
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    x = (x - mean) / std
    if enhanced:
        x[:, 1] *= 100.0
        x[:, 2] *= 100.0
    return x


def _assign(x: np.ndarray, medoids: np.ndarray) -> tuple[np.ndarray, float]:
    """Nearest-medoid labels (ties to the lower label) and total inertia."""
    d = cdist(x, x[medoids])
    labels = np.argmin(d, axis=1)
    labels[medoids] = np.arange(len(medoids))  # medoids stay in their own cluster
    inertia = float(d[np.arange(len(x)), labels].sum())
    return labels, inertia


def _update_medoid(x: np.ndarray, members: np.ndarray) -> int:
    """Member minimizing total distance to the cluster (ties: lowest index)."""
    if members.size > MEDOID_SUBSAMPLE:
        pick = np.linspace(0, members.size - 1, MEDOID_SUBSAMPLE).astype(int)
        members_sub = members[pick]
    else:
        members_sub = members
    pts = x[members_sub]
    d = cdist(pts, pts).sum(axis=1)
    return int(members_sub[int(np.argmin(d))])


def cluster_curves(
    features: PixelFeatures,
    K: int,
    enhanced: bool = True,
    seed: int = 0,
) -> list[CurveCluster]:
    """K-medoids over standardized HSL with Euclidean distance.

    Alternates assignment and medoid updates until the medoid set is
    stable (at most ``KMEDOIDS_MAX_ITER`` rounds); the best of
    ``KMEDOIDS_RESTARTS`` seeded restarts by inertia is returned, with
    clusters relabelled in ascending medoid order.
    """
    n = len(features)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise TooFewPixels(f"K={K} exceeds {n} available pixels")
    x = _standardize(features.hsl, enhanced)
    rng = np.random.default_rng(seed)

    best: tuple[float, np.ndarray, np.ndarray] | None = None
    for _ in range(KMEDOIDS_RESTARTS):
        medoids = np.sort(rng.choice(n, size=K, replace=False))
        for _ in range(KMEDOIDS_MAX_ITER):
            labels, _ = _assign(x, medoids)
            new_medoids = medoids.copy()
            for k in range(K):
                members = np.flatnonzero(labels == k)
                if members.size:
                    new_medoids[k] = _update_medoid(x, members)
            if np.array_equal(new_medoids, medoids):
                break
            medoids = new_medoids
        labels, inertia = _assign(x, medoids)
        if best is None or inertia < best[0]:
            best = (inertia, medoids.copy(), labels.copy())

    _, medoids, labels = best
    order = np.argsort(medoids)
    clusters = []
    for new_label, k in enumerate(order):
        members = np.flatnonzero(labels == k)
        clusters.append(
            CurveCluster(label=new_label, indices=members, medoid_index=int(medoids[k]))
        )
    return clusters


def consensus_scores(points: np.ndarray, labels: np.ndarray, k: int = CONSENSUS_K) -> np.ndarray:
    """Per-point label-consensus score over the k nearest neighbors.

    score_i = (1/k) * sum_j I_ij * w_ij with I_ij = +1 for a same-label
    neighbor, -1 otherwise, and w_ij = 1 / (d_ij^2 + 1e-10).
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k + 1:
        raise InsufficientNeighbors(f"need at least {k + 1} points, got {n}")

    tree = cKDTree(points)
    _, idx = tree.query(points, k=k + 1)
    idx = np.atleast_2d(idx)
    neighbors = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        row = idx[i]
        drop = np.flatnonzero(row == i)
        row = np.delete(row, drop[0]) if drop.size else row[:-1]
        neighbors[i] = row[:k]

    diff = points[:, None, :] - points[neighbors]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    w = 1.0 / (d2 + CONSENSUS_EPS)
    agree = np.where(labels[neighbors] == labels[:, None], 1.0, -1.0)
    return (agree * w).sum(axis=1) / k


def trace_path(pixels: np.ndarray, geom: AxisGeometry | None = None) -> np.ndarray:
    """Order cluster pixels into a path by greedy nearest-neighbor steps.

    Starts at the leftmost (then topmost) pixel; each step picks the
    nearest unvisited pixel with u >= current u - BACKTRACK_PX. When no
    such pixel lies within OUTLIER_JUMP_PX of the endpoint, the walk may
    resume from an unvisited pixel still within OUTLIER_JUMP_PX of the
    traced path (thick strokes leave such pockets); anything farther is
    discarded as an outlier.
    """
    pixels = np.asarray(pixels, dtype=float)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError("expected an (n, 2) array of (u, v) pixels")
    n = pixels.shape[0]
    if n == 0:
        raise ValueError("cannot trace an empty cluster")
    order = np.lexsort((pixels[:, 1], pixels[:, 0]))
    us = pixels[order, 0]
    vs = pixels[order, 1]

    visited = np.zeros(n, dtype=bool)
    path = [0]
    visited[0] = True
    cur = 0
    jump2 = OUTLIER_JUMP_PX**2

    def rescue(u_min: float) -> int | None:
        """Leftmost unvisited pixel (u >= u_min) within reach of the path."""
        start = np.searchsorted(us, u_min, side="left")
        for idx in np.flatnonzero(~visited[start:]) + start:
            w_lo = np.searchsorted(us, us[idx] - OUTLIER_JUMP_PX, side="left")
            w_hi = np.searchsorted(us, us[idx] + OUTLIER_JUMP_PX, side="right")
            near = np.flatnonzero(visited[w_lo:w_hi]) + w_lo
            if near.size == 0:
                continue
            d2 = (us[near] - us[idx]) ** 2 + (vs[near] - vs[idx]) ** 2
            if d2.min() <= jump2:
                return int(idx)
        return None

    for _ in range(n - 1):
        u_cur, v_cur = us[cur], vs[cur]
        lo = np.searchsorted(us, u_cur - BACKTRACK_PX, side="left")
        hi = np.searchsorted(us, u_cur + OUTLIER_JUMP_PX, side="right")
        cand = np.flatnonzero(~visited[lo:hi]) + lo
        pick = None
        if cand.size:
            du = us[cand] - u_cur
            dv = vs[cand] - v_cur
            d2 = du * du + dv * dv
            sel = np.lexsort((vs[cand], us[cand], d2))[0]
            if d2[sel] <= jump2:
                pick = int(cand[sel])
        if pick is None:
            pick = rescue(u_cur - BACKTRACK_PX)
            if pick is None:
                break
        path.append(pick)
        visited[pick] = True
        cur = pick
    return np.column_stack([us[path], vs[path]])


def path_to_points(
    path: np.ndarray,
    geom: AxisGeometry,
    x: AxisRange,
    y: AxisRange,
    point_scores: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Collapse a pixel path to one calibrated point per column.

    Flat stretches take the median v of the column (centerline of the
    stroke); columns much taller than the stroke width are risers, whose
    survival value is the post-drop level (bottom minus half the stroke),
    matching the right-continuity of the step function. Scores average
    over the contributing pixels.
    """
    path = np.asarray(path, dtype=float)
    if point_scores is None:
        point_scores = np.ones(path.shape[0])
    uniq, inverse = np.unique(path[:, 0], return_inverse=True)
    m = uniq.size
    v_min = np.full(m, np.inf)
    v_max = np.full(m, -np.inf)
    mean_score = np.empty(m)
    columns = []
    for j in range(m):
        members = inverse == j
        col_v = path[members, 1]
        columns.append(col_v)
        v_min[j], v_max[j] = col_v.min(), col_v.max()
        mean_score[j] = np.mean(point_scores[members])
    extents = v_max - v_min + 1
    stroke_w = float(np.median(extents))
    half = (stroke_w - 1) / 2.0
    riser = extents > 2.5 * stroke_w

    v_used = np.empty(m)
    for j in range(m):
        if not riser[j]:
            v_used[j] = np.median(columns[j])
        elif j + 1 < m and riser[j + 1]:
            # Stroke bleed ahead of the drop: hold the pre-drop level.
            v_used[j] = v_used[j - 1] if j > 0 else v_min[j] + half
        else:
            v_used[j] = v_max[j] - half  # last riser column carries the post-drop level
    pts = calibrate_array(np.column_stack([uniq, v_used]), geom, x, y)
    return pts, mean_score


def repair_overlaps(traces: Sequence[CurveTrace]) -> list[CurveTrace]:
    """Re-interpolate low-consensus spans and enforce step monotonicity.

    Points with score < 0 are uncertain; each uncertain run is replaced by
    linear interpolation (in t) between the flanking confident points, and
    the result is clamped to non-decreasing t / non-increasing s.
    """
    repaired = []
    for trace in traces:
        t = trace.points[:, 0].copy()
        s = trace.points[:, 1].copy()
        conf = trace.scores >= 0
        if not conf.any():
            raise UnresolvableOverlap(f"trace {trace.group!r} has no confident points")
        if not conf.all():
            ct, cs = t[conf], s[conf]
            uncertain = np.flatnonzero(~conf)
            s[uncertain] = np.interp(t[uncertain], ct, cs)
        t = np.maximum.accumulate(t)
        s = np.minimum.accumulate(s)
        repaired.append(
            CurveTrace(
                group=trace.group,
                points=np.column_stack([t, s]),
                pixel_path=trace.pixel_path,
                scores=trace.scores,
            )
        )
    return repaired


# --- serialization (30_traces.json) ----------------------------------------


def traces_to_json(traces: Sequence[CurveTrace]) -> str:
    doc = {
        "traces": [
            {
                "group": tr.group,
                "points": [[float(a), float(b)] for a, b in tr.points],
                "pixel_path": [[float(a), float(b)] for a, b in tr.pixel_path],
                "scores": [float(v) for v in tr.scores],
            }
            for tr in traces
        ]
    }
    return json.dumps(doc, indent=2)


def traces_from_json(payload: str | bytes) -> list[CurveTrace]:
    doc = json.loads(payload)
    return [
        CurveTrace(
            group=item["group"],
            points=np.array(item["points"], dtype=float).reshape(-1, 2),
            pixel_path=np.array(item["pixel_path"], dtype=float).reshape(-1, 2),
            scores=np.array(item["scores"], dtype=float),
        )
        for item in doc["traces"]
    ]


def save_traces(traces: Sequence[CurveTrace], path: str | Path) -> None:
    Path(path).write_text(traces_to_json(traces))
