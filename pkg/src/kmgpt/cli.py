"""Command-line entry points: run, bench, meta, validate, serve."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_run(args) -> int:
    from .pipeline import JobStore, PipelineConfig, run_pipeline

    edits = Path(args.edits).read_text() if args.edits else None
    config = PipelineConfig(
        provider_kind=args.provider,
        sidecar_path=args.sidecar,
        seed=args.seed,
        force=args.force,
        live_base_url=args.base_url,
        live_model=args.model,
    )
    store = JobStore(args.out)
    result = run_pipeline(args.image, edits, config, store=store)
    job = result["job"]
    print(f"job {job.id}: {job.state}")
    for group, info in result["report"]["overlay"].items():
        print(f"  {group}: overlay max gap {info['max_gap']:.4f} ({'pass' if info['pass'] else 'FAIL'})")
    print(f"  artifacts in {job.dir}")
    return 0


def _cmd_bench(args) -> int:
    from .pipeline import bench_pipeline_adapter
    from .synthbench import ALL_CELLS, GridCell, run_grid

    cells = ALL_CELLS if args.cells == "all" else [
        GridCell.from_code(code.strip().upper()) for code in args.cells.split(",")
    ]
    summary = run_grid(
        cells=cells,
        reps=args.reps,
        pipeline=bench_pipeline_adapter(),
        master_seed=args.seed,
        out_dir=args.out,
    )
    print(f"success {summary['success']}/{summary['total']}")
    print(f"median IAE {summary['median_iae']:.4f}")
    print(f"median AE {summary['median_ae']:.4f}")
    print(f"median |d mOS| {summary['median_mos_ae']:.4f}")
    print(f"summary written to {Path(args.out) / 'summary.csv'}")
    return 0


def _cmd_meta(args) -> int:
    from .meta import (
        IntervalGrid,
        SamplerConfig,
        bin_ipd,
        estimate_pooled_median,
        pooled_survival,
        rmst,
        sample_posterior,
    )
    from .survival import IPDRecord

    records_by_study = {}
    for path in args.ipd:
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        records_by_study[path.stem] = [
            IPDRecord(
                time=float(row["time"]),
                status=int(row["status"]),
                group=row.get(args.group_col, "") or "",
            )
            for row in rows
        ]

    if args.intervals == "auto":
        grid = IntervalGrid.auto(records_by_study)
    else:
        t_max = max(r.time for recs in records_by_study.values() for r in recs)
        interior = [float(v) for v in args.intervals.split(",")]
        grid = IntervalGrid.from_cuts(interior, t_max)

    stats = bin_ipd(records_by_study, grid)
    config = SamplerConfig(chains=args.chains, warmup=args.warmup, draws=args.draws, seed=args.seed)
    posterior = sample_posterior(stats, grid, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "draws.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        names = [f"a[{j}]" for j in range(grid.J)] + ["sigma_a", "tau_ar", "psi"]
        writer.writerow(names)
        for i in range(posterior.n_draws):
            writer.writerow(
                [format(v, ".8g") for v in posterior.a[i]]
                + [format(posterior.sigma_a[i], ".8g"),
                   format(posterior.tau_ar[i], ".8g"),
                   format(posterior.psi[i], ".8g")]
            )

    times = np.linspace(0, grid.cuts[-1], 101)
    bands = pooled_survival(posterior, grid, times)
    with open(out / "survival_bands.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "median", "lo", "hi"])
        pooled = bands["pooled"]
        for row in zip(pooled["times"], pooled["median"], pooled["lo"], pooled["hi"]):
            writer.writerow([format(v, ".8g") for v in row])

    horizons = [float(h) for h in args.rmst.split(",")] if args.rmst else []
    summary = {
        "studies": list(records_by_study),
        "grid": list(grid.cuts),
        "pooled_median": estimate_pooled_median(posterior, grid),
        "rmst": {
            str(h): {k: v for k, v in rmst(posterior, grid, h).items() if k != "draws"}
            for h in horizons
            if h <= grid.cuts[-1]
        },
        "worst_rhat": max(d["rhat"] for d in posterior.diagnostics.values()),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"pooled median: {summary['pooled_median']}")
    print(f"worst R-hat: {summary['worst_rhat']:.4f}")
    print(f"outputs in {out}")
    return 0


def _cmd_validate(args) -> int:
    from .metadata import validate_input
    from .pipeline import PipelineConfig
    from .raster import load_image

    config = PipelineConfig(
        provider_kind=args.provider,
        sidecar_path=args.sidecar,
        live_base_url=args.base_url,
        live_model=args.model,
    )
    report = validate_input(load_image(args.image), config.resolve_provider())
    print(json.dumps(report.to_dict(), indent=2))
    return 0 if report.ok else 1


def _cmd_serve(args) -> int:
    from .server import serve

    serve(bind=args.bind, job_dir=args.job_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kmgpt", description="KM plot digitization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="digitize one plot end to end")
    run_p.add_argument("--image", required=True)
    run_p.add_argument("--edits", default=None, help="edits JSON file")
    run_p.add_argument("--provider", default="sidecar", choices=["sidecar", "live"])
    run_p.add_argument("--sidecar", default=None, help="sidecar metadata JSON")
    run_p.add_argument("--base-url", default="", help="live provider endpoint")
    run_p.add_argument("--model", default="", help="live provider model name")
    run_p.add_argument("--seed", type=int, default=0)
    run_p.add_argument("--out", default="jobs", help="job store directory")
    run_p.add_argument("--force", action="store_true", help="proceed past failed validation")
    run_p.set_defaults(func=_cmd_run)

    bench_p = sub.add_parser("bench", help="synthetic round-trip benchmark grid")
    bench_p.add_argument("--cells", default="all", help='"all" or comma-separated codes like MML,HLH')
    bench_p.add_argument("--reps", type=int, default=2)
    bench_p.add_argument("--seed", type=int, default=0)
    bench_p.add_argument("--out", required=True)
    bench_p.set_defaults(func=_cmd_bench)

    meta_p = sub.add_parser("meta", help="Bayesian piecewise-exponential meta-analysis")
    meta_p.add_argument("--ipd", nargs="+", required=True, help="IPD CSV files, one per study")
    meta_p.add_argument("--group-col", default="group")
    meta_p.add_argument("--intervals", default="auto", help='"auto" or comma-separated cut points')
    meta_p.add_argument("--chains", type=int, default=4)
    meta_p.add_argument("--draws", type=int, default=5000)
    meta_p.add_argument("--warmup", type=int, default=2000)
    meta_p.add_argument("--seed", type=int, default=0)
    meta_p.add_argument("--rmst", default="", help="comma-separated horizons")
    meta_p.add_argument("--out", required=True)
    meta_p.set_defaults(func=_cmd_meta)

    val_p = sub.add_parser("validate", help="run only the input validation gate")
    val_p.add_argument("--image", required=True)
    val_p.add_argument("--provider", default="sidecar", choices=["sidecar", "live"])
    val_p.add_argument("--sidecar", default=None)
    val_p.add_argument("--base-url", default="")
    val_p.add_argument("--model", default="")
    val_p.set_defaults(func=_cmd_validate)

    serve_p = sub.add_parser("serve", help="run the HTTP API")
    serve_p.add_argument("--bind", default="127.0.0.1:8000")
    serve_p.add_argument("--job-dir", default=None)
    serve_p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
