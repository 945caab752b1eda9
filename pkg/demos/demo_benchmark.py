"""A small slice of the synthetic round-trip benchmark grid.

Usage: python demos/demo_benchmark.py          # 4 cells x 1 rep, ~1 minute
       python demos/demo_benchmark.py --full   # all 27 cells x 2 reps
"""

import sys
from pathlib import Path

from kmgpt.pipeline import bench_pipeline_adapter
from kmgpt.synthbench import ALL_CELLS, GridCell, run_grid

full = "--full" in sys.argv
cells = ALL_CELLS if full else [GridCell.from_code(c) for c in ("LLL", "MMM", "HML", "LHH")]
reps = 2 if full else 1
out_dir = Path("demo_out/benchmark")

summary = run_grid(
    cells=cells,
    reps=reps,
    pipeline=bench_pipeline_adapter(),
    master_seed=20240811,
    out_dir=out_dir,
)

print(f"\n{'cell':>5} {'rep':>3} {'IAE':>8} {'|d mOS|':>8} success")
for row in summary["rows"]:
    print(f"{row['cell']:>5} {row['rep']:>3} {row['iae']:8.4f} {row['mos_ae']:8.4f} {row['success']}")
print(f"\nsuccess {summary['success']}/{summary['total']}")
print(f"median IAE    {summary['median_iae']:.4f}")
print(f"median AE     {summary['median_ae']:.4f}")
print(f"median |dmOS| {summary['median_mos_ae']:.4f}")
print(f"per-run artifacts and summary CSVs in {out_dir}/")
