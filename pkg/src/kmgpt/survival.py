"""Individual patient records and the product-limit survival estimator.

The estimator follows the standard convention for tied times: events at a
time t are processed before censorings at t, so a censoring at an event
time leaves the risk set only after the event.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

NOT_REACHED = math.inf


@dataclass(frozen=True)
class IPDRecord:
    """One reconstructed or simulated subject."""

    time: float
    status: int  # 1 = event, 0 = censored
    group: str = ""

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise ValueError(f"time must be finite and >= 0, got {self.time}")
        if self.status not in (0, 1):
            raise ValueError(f"status must be 0 or 1, got {self.status}")


@dataclass(frozen=True)
class SurvivalCurve:
    """Right-continuous step estimate: S(t) holds from each step time on."""

    step_times: np.ndarray  # ascending distinct event times
    probabilities: np.ndarray  # S(t) just after each step
    at_risk: np.ndarray  # risk-set size just before each step
    n_events: np.ndarray  # events at each step
    group: str = ""
    greenwood_var: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("step_times", "probabilities", "at_risk", "n_events"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.greenwood_var is None:
            object.__setattr__(self, "greenwood_var", np.zeros_like(self.probabilities))

    def evaluate(self, times) -> np.ndarray:
        """S(t) at arbitrary times; 1 before the first step."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.searchsorted(self.step_times, times, side="right") - 1
        out = np.ones_like(times)
        mask = idx >= 0
        out[mask] = self.probabilities[idx[mask]]
        return out


def km_estimate(records: Sequence[IPDRecord]) -> SurvivalCurve:
    """Kaplan-Meier product-limit estimate from IPD.

    S(t) = prod over event times t_k <= t of (1 - d_k / n_k).
    """
    if len(records) == 0:
        raise ValueError("km_estimate requires at least one record")
    times = np.array([r.time for r in records], dtype=float)
    status = np.array([r.status for r in records], dtype=int)
    group = records[0].group

    event_times = np.unique(times[status == 1])
    step_s, step_n, step_d, green = [], [], [], []
    surv = 1.0
    gw_sum = 0.0
    for t in event_times:
        n_at_risk = int(np.sum(times >= t))
        d = int(np.sum((times == t) & (status == 1)))
        surv *= 1.0 - d / n_at_risk
        if n_at_risk > d:
            gw_sum += d / (n_at_risk * (n_at_risk - d))
        else:
            gw_sum = math.inf
        step_s.append(surv)
        step_n.append(n_at_risk)
        step_d.append(d)
        green.append(surv * surv * gw_sum if math.isfinite(gw_sum) else math.inf)
    return SurvivalCurve(
        step_times=np.array(event_times, dtype=float),
        probabilities=np.array(step_s, dtype=float),
        at_risk=np.array(step_n, dtype=float),
        n_events=np.array(step_d, dtype=float),
        group=group,
        greenwood_var=np.array(green, dtype=float),
    )


def _loglog_bounds(curve: SurvivalCurve, conf_level: float = 0.95):
    """Pointwise CI for S(t) via the log(-log S) transform and Greenwood variance."""
    z = norm.ppf(1.0 - (1.0 - conf_level) / 2.0)
    s = curve.probabilities
    lower = np.full_like(s, np.nan)
    upper = np.full_like(s, np.nan)
    interior = (s > 0.0) & (s < 1.0) & np.isfinite(curve.greenwood_var)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma2 = np.where(s > 0, curve.greenwood_var / np.square(s), np.inf)
        se_g = np.sqrt(sigma2) / np.abs(np.log(np.where(interior, s, 0.5)))
        lower[interior] = s[interior] ** np.exp(z * se_g[interior])
        upper[interior] = s[interior] ** np.exp(-z * se_g[interior])
    lower[s == 0.0] = 0.0
    upper[s == 0.0] = 0.0
    lower[s == 1.0] = np.nan
    upper[s == 1.0] = np.nan
    return lower, upper


def _first_crossing(step_times: np.ndarray, values: np.ndarray, level: float) -> float:
    """First step time at which the step function drops to <= level."""
    ok = np.isfinite(values) & (values <= level)
    if not ok.any():
        return NOT_REACHED
    return float(step_times[np.argmax(ok)])


def median_survival(curve: SurvivalCurve, conf_level: float = 0.95) -> dict:
    """Median survival time with a Greenwood log(-log) confidence interval.

    Returns {"median", "ci_low", "ci_high"}; entries are ``NOT_REACHED``
    (inf) where the relevant curve never crosses 0.5.
    """
    median = _first_crossing(curve.step_times, curve.probabilities, 0.5)
    if curve.step_times.size == 0:
        return {"median": NOT_REACHED, "ci_low": NOT_REACHED, "ci_high": NOT_REACHED}
    lower, upper = _loglog_bounds(curve, conf_level)
    # Lower CI of S crosses 0.5 first -> earliest plausible median.
    ci_low = _first_crossing(curve.step_times, lower, 0.5)
    ci_high = _first_crossing(curve.step_times, upper, 0.5)
    return {"median": median, "ci_low": ci_low, "ci_high": ci_high}


def risk_counts(records: Sequence[IPDRecord], anchor_times: Iterable[float]) -> list[int]:
    """Number at risk at each anchor: count of subjects with observed time >= anchor."""
    times = np.array([r.time for r in records], dtype=float)
    return [int(np.sum(times >= a)) for a in anchor_times]


# --- CSV persistence (time,status,group) -----------------------------------


def write_ipd_csv(records: Sequence[IPDRecord], path: str | Path) -> None:
    """Write records as CSV with a stable order and number format."""
    ordered = sorted(records, key=lambda r: (r.group, r.time, -r.status))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "status", "group"])
        for rec in ordered:
            # .17g keeps the exact float so CSV round-trips bit-for-bit
            writer.writerow([format(rec.time, ".17g"), rec.status, rec.group])


def read_ipd_csv(path: str | Path) -> list[IPDRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "time" not in reader.fieldnames:
            raise ValueError(f"{path}: expected header with time,status[,group]")
        for row in reader:
            records.append(
                IPDRecord(
                    time=float(row["time"]),
                    status=int(row["status"]),
                    group=row.get("group", "") or "",
                )
            )
    return records
