"""Reconstruct IPD from a hand-entered digitized curve and risk table.

Usage: python demos/demo_reconstruct.py
"""

from pathlib import Path

import numpy as np

from kmgpt.reconstruct import DigitizedCurve, RiskRow, overlay_check, reconstruct_ipd
from kmgpt.survival import km_estimate, median_survival, risk_counts, write_ipd_csv

out_dir = Path("demo_out/reconstruct")
out_dir.mkdir(parents=True, exist_ok=True)

# Digitized step values (time in months, survival probability) as a reader
# of a published plot would record them.
curve = DigitizedCurve(
    points=np.array([
        [0.0, 1.00], [1.8, 0.95], [3.1, 0.88], [4.9, 0.80], [6.0, 0.74],
        [7.7, 0.66], [9.2, 0.58], [11.4, 0.49], [13.6, 0.42], [15.9, 0.36],
        [18.5, 0.31], [21.0, 0.28], [24.0, 0.28],
    ]),
    group="treatment",
)
# the published number-at-risk row
risk = RiskRow(anchor_times=(0.0, 6.0, 12.0, 18.0, 24.0), counts=(120, 84, 52, 30, 18))

records = reconstruct_ipd(curve, risk)
write_ipd_csv(records, out_dir / "ipd.csv")
n_events = sum(1 for r in records if r.status == 1)
print(f"reconstructed {len(records)} records ({n_events} events, "
      f"{len(records) - n_events} censored) -> {out_dir/'ipd.csv'}")

print("number at risk, reported vs re-computed:")
for anchor, reported, recomputed in zip(
    risk.anchor_times, risk.counts, risk_counts(records, risk.anchor_times)
):
    print(f"  t={anchor:5.1f}  reported {reported:4d}  recomputed {recomputed:4d}")

check = overlay_check(curve, records)
print(f"overlay max gap: {check['max_gap']:.4f} ({'pass' if check['pass'] else 'fail'})")

est = median_survival(km_estimate(records))
print(f"median survival {est['median']:.1f} months "
      f"(95% CI {est['ci_low']:.1f} - {est['ci_high']:.1f})")
