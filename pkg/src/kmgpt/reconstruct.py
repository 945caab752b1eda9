"""Iterative IPD reconstruction from a digitized curve and a risk table.

Within each risk-table interval the number of censorings is iterated:
censor times are spread uniformly over the interval, events are placed at
the digitized step times so the re-estimated product-limit curve tracks
the digitized survival values, and the censoring count is corrected by
the mismatch between the implied and reported number at risk at the next
anchor until they agree exactly (or the iteration cap is hit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidRiskTable, ReconstructionDiverged
from .survival import IPDRecord, SurvivalCurve, km_estimate

ITERATION_CAP = 30
OVERLAY_TOLERANCE = 0.02


@dataclass(frozen=True)
class DigitizedCurve:
    """Calibrated (t, s) samples of one survival curve, ready to reconstruct."""

    points: np.ndarray  # (n, 2), t ascending, s non-increasing in [0, 1]
    group: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a non-empty (n, 2) array")
        t, s = pts[:, 0], pts[:, 1]
        if np.any(np.diff(t) < 0):
            raise ValueError("t must be non-decreasing")
        if np.any(np.diff(s) > 1e-9):
            raise ValueError("s must be non-increasing")
        if s.min() < -1e-9 or s.max() > 1 + 1e-9:
            raise ValueError("s must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_noisy(cls, points: np.ndarray, group: str = "") -> "DigitizedCurve":
        """Sort, clamp to [0, 1], and enforce monotonicity on raw samples."""
        pts = np.asarray(points, dtype=float)
        pts = pts[np.argsort(pts[:, 0], kind="stable")]
        s = np.clip(pts[:, 1], 0.0, 1.0)
        s = np.minimum.accumulate(s)
        return cls(points=np.column_stack([pts[:, 0], s]), group=group)


@dataclass(frozen=True)
class RiskRow:
    """One group's number-at-risk counts at ascending anchor times."""

    anchor_times: tuple[float, ...]
    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.anchor_times) != len(self.counts) or len(self.counts) == 0:
            raise ValueError("anchor_times and counts must align and be non-empty")
        if any(b <= a for a, b in zip(self.anchor_times, self.anchor_times[1:])):
            raise ValueError("anchor times must be strictly ascending")


def _validate_risk(risk: RiskRow) -> None:
    counts = risk.counts
    if counts[0] < 1:
        raise InvalidRiskTable("first at-risk count must be >= 1")
    if any(c < 0 for c in counts):
        raise InvalidRiskTable("negative at-risk count")
    if any(b > a for a, b in zip(counts, counts[1:])):
        raise InvalidRiskTable("at-risk counts increase over time")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _walk_interval(
    pts: list[tuple[float, float]],
    censor_times: list[float],
    n_start: int,
    s_enter: float,
    event_budget: int | None = None,
):
    """Place events at step times against the digitized values.

    Censors strictly before a step time leave the risk set first; the
    event count at each step is rounded so the re-estimated curve matches
    the digitized value. An event budget caps the interval's total events
    (rounding noise otherwise overdraws the reported risk decrement).
    Returns (events, n_end, s_exit).
    """
    n_run = n_start
    s_hat = s_enter  # re-estimated KM at the last event so far
    events: list[tuple[float, int]] = []
    ci = 0
    used = 0
    for t_i, s_i in pts:
        while ci < len(censor_times) and censor_times[ci] < t_i and n_run > 0:
            n_run -= 1
            ci += 1
        if n_run <= 0:
            break
        d = 0
        if s_hat > 0:
            d = _round_half_up(n_run * (1.0 - s_i / s_hat))
        d = max(0, min(d, n_run))
        if event_budget is not None:
            d = min(d, event_budget - used)
        if d > 0:
            s_hat = s_hat * (1.0 - d / n_run)
            n_run -= d
            used += d
            events.append((t_i, d))
    n_run -= len(censor_times) - ci  # censors after the last step
    return events, max(n_run, 0), s_hat


def _spread_censor_times(lo: float, hi: float, count: int) -> list[float]:
    return [lo + j * (hi - lo) / (count + 1) for j in range(1, count + 1)]


def reconstruct_ipd(
    curve: DigitizedCurve,
    risk: RiskRow,
    total_events: int | None = None,
) -> list[IPDRecord]:
    """Reconstruct individual records that reproduce the curve and risk table.

    Raises ``ReconstructionDiverged`` (carrying the best iterate and a
    per-anchor mismatch diagnostic) if some interval cannot be reconciled
    exactly within the iteration cap.
    """
    _validate_risk(risk)
    anchors = list(risk.anchor_times)
    counts = list(risk.counts)
    group = curve.group

    t = curve.points[:, 0].copy()
    s = np.clip(curve.points[:, 1], 0.0, 1.0)
    # Pixel noise can leave the first sample slightly off 1; rescale so the
    # curve starts at exactly 1 before matching ratios against it.
    if 0.9 < s[0] < 1.0 or s[0] > 1.0:
        s = np.minimum(s / s[0], 1.0)
    keep = t >= anchors[0]
    t, s = t[keep], s[keep]
    pts_all = [(anchors[0], 1.0)] + [
        (float(a), float(b)) for a, b in zip(t, s) if not (a == anchors[0] and b >= 1.0)
    ]

    records: list[IPDRecord] = []
    mismatches: dict[float, int] = {}
    n_run = counts[0]
    s_hat = 1.0
    diverged = False

    for m in range(len(anchors) - 1):
        a_lo, a_hi = anchors[m], anchors[m + 1]
        target = counts[m + 1]
        pts_m = [(a, b) for a, b in pts_all if a_lo <= a < a_hi]

        c_guess = 0
        best = None  # (abs mismatch, events, censor_times, n_end, s_exit)
        for _ in range(ITERATION_CAP):
            budget = max(0, n_run - c_guess - target)
            censor_times = _spread_censor_times(a_lo, a_hi, c_guess)
            events, n_end, s_exit = _walk_interval(
                pts_m, censor_times, n_run, s_hat, event_budget=budget
            )
            mismatch = n_end - target
            if best is None or abs(mismatch) < best[0]:
                best = (abs(mismatch), events, censor_times, n_end, s_exit)
            if mismatch == 0:
                break
            c_guess = max(0, min(c_guess + mismatch, n_run))
        gap, events, censor_times, n_end, s_exit = best
        if gap != 0:
            diverged = True
            mismatches[a_hi] = n_end - target
        for t_e, d in events:
            records.extend(IPDRecord(time=t_e, status=1, group=group) for _ in range(d))
        records.extend(IPDRecord(time=ct, status=0, group=group) for ct in censor_times)
        n_run, s_hat = n_end, s_exit

    # Final open interval beyond the last anchor: no further counts to
    # match, so censoring is zero unless a reported event total says the
    # tail split must be rescaled.
    a_last = anchors[-1]
    pts_tail = [(a, b) for a, b in pts_all if a >= a_last and a > anchors[0]]
    events, n_end, s_hat = _walk_interval(pts_tail, [], n_run, s_hat)
    if total_events is not None:
        done = sum(1 for r in records if r.status == 1)
        target_tail = max(0, total_events - done)
        got_tail = sum(d for _, d in events)
        if got_tail > 0 and target_tail != got_tail:
            scaled = _rescale_events(events, target_tail)
            freed = got_tail - sum(d for _, d in scaled)
            events = scaled
            n_end = max(0, n_end + freed)
    for t_e, d in events:
        records.extend(IPDRecord(time=t_e, status=1, group=group) for _ in range(d))

    # Anyone still at risk past the curve is censored at the last observed time.
    if n_end > 0:
        t_end = max((a for a, _ in pts_all), default=a_last)
        t_end = max(t_end, a_last)
        records.extend(IPDRecord(time=t_end, status=0, group=group) for _ in range(n_end))

    if diverged:
        raise ReconstructionDiverged(
            f"risk counts unmatched at anchors {sorted(mismatches)} after {ITERATION_CAP} iterations",
            records=records,
            diagnostic=mismatches,
        )
    return records


def _rescale_events(events: list[tuple[float, int]], target: int) -> list[tuple[float, int]]:
    """Proportionally rescale event counts to a reported total (largest remainder)."""
    got = sum(d for _, d in events)
    raw = [d * target / got for _, d in events]
    base = [int(math.floor(x)) for x in raw]
    short = target - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (raw[i] - base[i], -i), reverse=True)
    for i in order[:short]:
        base[i] += 1
    return [(t, min(d, ev_d) if target < got else d) for (t, ev_d), d in zip(events, base)]


def overlay_check(
    original: DigitizedCurve,
    reconstructed_ipd: Sequence[IPDRecord],
    tolerance: float = OVERLAY_TOLERANCE,
) -> dict:
    """Max pointwise gap between the digitized curve and the re-estimated KM."""
    if len(reconstructed_ipd) == 0:
        raise ValueError("no reconstructed records to check")
    curve = km_estimate(list(reconstructed_ipd))
    s_recon = curve.evaluate(original.points[:, 0])
    max_gap = float(np.max(np.abs(s_recon - original.points[:, 1])))
    return {"max_gap": max_gap, "pass": max_gap <= tolerance}


def km_from_digitized(curve: DigitizedCurve, risk: RiskRow, total_events: int | None = None) -> SurvivalCurve:
    """Convenience: reconstruct then re-estimate the survival curve."""
    records = reconstruct_ipd(curve, risk, total_events)
    return km_estimate(records)
