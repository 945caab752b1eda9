"""End-to-end job orchestration with staged, append-only artifacts.

A job directory accumulates numbered stage files (00_input.png through
60_report.json); reruns always create a fresh job. The pipeline is
deterministic given (image bytes, edits, seed, provider script), and no
provider API key is ever written to disk or logs.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import itertools
import json
import logging
import os
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import ImageDraw

from . import curves as curvemod
from .errors import KmgptError, PipelineStageError
from .geometry import AxisGeometry, AxisRange, detect_ranges, inverse_calibrate, locate_axes
from .metadata import (
    MetadataProvider,
    PlotMetadata,
    ScriptedProvider,
    SidecarProvider,
    ValidationReport,
    extract_metadata,
    validate_input,
)
from .ocr import OcrEngine, TemplateGlyphEngine, run_ocr, tick_tokens_from_ocr
from .prep import RegionMask, apply_edits, edits_to_json, enhance, parse_edits
from .raster import RasterImage, load_image, luminance, rgb_to_hsl, save_png
from .reconstruct import OVERLAY_TOLERANCE, DigitizedCurve, overlay_check, reconstruct_ipd
from .survival import IPDRecord, km_estimate, write_ipd_csv

log = logging.getLogger(__name__)

STAGE_FILES = {
    "input": "00_input.png",
    "edits": "05_edits.json",
    "prepped": "10_prepped.png",
    "metadata": "20_metadata.json",
    "traces": "30_traces.json",
    "ipd": "40_ipd.csv",
    "overlay": "50_overlay.png",
    "report": "60_report.json",
}

# Job.state milestones, in order: "validated" means InputGuard passed on the
# prepared image, "prepared" means metadata extraction finished.
JOB_STATES = ("created", "validated", "prepared", "extracted", "reconstructed", "failed")


@dataclass
class Job:
    id: str
    root: Path
    state: str = "created"
    stage_paths: dict = field(default_factory=dict)
    error: str | None = None
    created_at: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())

    @property
    def dir(self) -> Path:
        return self.root / self.id

    def advance(self, state: str) -> None:
        order = JOB_STATES.index
        if state != "failed" and order(state) < order(self.state):
            raise ValueError(f"job state may not move backward: {self.state} -> {state}")
        self.state = state
        self.persist()

    def fail(self, error: str) -> None:
        self.state = "failed"
        self.error = error
        self.persist()

    def record(self, stage: str) -> Path:
        path = self.dir / STAGE_FILES[stage]
        self.stage_paths[stage] = STAGE_FILES[stage]
        return path

    def persist(self) -> None:
        doc = {
            "id": self.id,
            "state": self.state,
            "stage_paths": self.stage_paths,
            "error": self.error,
            "created_at": self.created_at,
        }
        # Atomic replace so API readers never see a half-written file.
        tmp = self.dir / "job.json.tmp"
        tmp.write_text(json.dumps(doc, indent=2))
        tmp.replace(self.dir / "job.json")

    def to_dict(self) -> dict:
        return json.loads((self.dir / "job.json").read_text())


class JobStore:
    """Filesystem job tree: one directory per job, append-only."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root or os.environ.get("KMGPT_JOB_DIR", "jobs"))
        self.root.mkdir(parents=True, exist_ok=True)

    def create(self) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], root=self.root)
        job.dir.mkdir(parents=True)
        job.persist()
        return job

    def get(self, job_id: str) -> Job | None:
        if not (self.root / job_id / "job.json").exists():
            return None
        doc = json.loads((self.root / job_id / "job.json").read_text())
        return Job(
            id=doc["id"],
            root=self.root,
            state=doc["state"],
            stage_paths=doc["stage_paths"],
            error=doc.get("error"),
            created_at=doc.get("created_at", ""),
        )


@dataclass
class PipelineConfig:
    """How a pipeline run talks to its providers."""

    provider_kind: str = "sidecar"  # "live" | "sidecar" | "scripted"
    sidecar_path: str | Path | None = None
    provider: MetadataProvider | None = None  # overrides provider_kind when set
    ocr_engine: OcrEngine | None = None
    seed: int = 0
    overlay_tolerance: float = OVERLAY_TOLERANCE
    force: bool = False
    resize_target: int = 1600  # long edge of the enhanced working image
    live_base_url: str = ""
    live_model: str = ""
    api_key: str | None = None  # held in memory only; never persisted

    def resolve_provider(self) -> MetadataProvider:
        if self.provider is not None:
            return self.provider
        if self.provider_kind == "sidecar":
            if not self.sidecar_path:
                raise ValueError("sidecar provider requires a sidecar path")
            return SidecarProvider(self.sidecar_path)
        if self.provider_kind == "live":
            from .metadata import LiveProvider

            return LiveProvider(self.live_base_url, self.live_model, api_key=self.api_key)
        if self.provider_kind == "scripted":
            return ScriptedProvider()
        raise ValueError(f"unknown provider kind {self.provider_kind!r}")

    def resolve_ocr(self) -> OcrEngine:
        if self.ocr_engine is not None:
            return self.ocr_engine
        return TemplateGlyphEngine()


def _prompt_hashes() -> dict:
    prompt_dir = Path(__file__).parent / "prompts"
    return {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest()[:16]
        for p in sorted(prompt_dir.glob("*.txt"))
    }


def _text_bands(ink_rows: np.ndarray, min_gap: int = 3) -> list[tuple[int, int]]:
    """Contiguous runs of rows containing ink, merged across gaps < min_gap."""
    rows = np.flatnonzero(ink_rows)
    if rows.size == 0:
        return []
    bands = []
    start = prev = rows[0]
    for r in rows[1:]:
        if r - prev >= min_gap:
            bands.append((int(start), int(prev)))
            start = r
        prev = r
    bands.append((int(start), int(prev)))
    return bands


def _label_regions(image: RasterImage, geom: AxisGeometry) -> dict:
    """Locate the x-tick-label band and the risk-table block below the axis."""
    ink = luminance(image) < 0.5
    below = ink[geom.v_y1 + 1 :, :].any(axis=1)
    bands = [(a + geom.v_y1 + 1, b + geom.v_y1 + 1) for a, b in _text_bands(below)]
    # Tick stubs touch the axis baseline; label text starts after a gap.
    text_bands = [b for b in bands if b[0] > geom.v_y1 + 3]
    regions: dict = {"x_labels": None, "risk_table": None}
    if text_bands:
        lo, hi = text_bands[0]
        regions["x_labels"] = (0, lo - 1, image.width, min(hi + 2, image.height))
    if len(text_bands) > 1:
        lo = text_bands[1][0]
        hi = text_bands[-1][1]
        regions["risk_table"] = (0, lo - 1, image.width, min(hi + 2, image.height))
    # y labels: left of the axis (excluding spine bleed), padded vertically by
    # the glyph height observed in the x-label band so edge labels stay whole.
    pad = (text_bands[0][1] - text_bands[0][0] + 6) if text_bands else 18
    x1 = max(1, geom.u_x0 - 2)
    regions["y_labels"] = (0, max(0, geom.v_y0 - pad), x1, min(geom.v_y1 + pad, image.height))
    return regions


def _parse_color_hint(hint: str | None) -> float | None:
    """CSS-ish color hint -> hue in [0, 1); None when unparseable."""
    if not hint:
        return None
    named = {
        "red": 0.0, "orange": 0.08, "yellow": 0.17, "green": 0.33,
        "cyan": 0.5, "blue": 0.63, "purple": 0.78, "magenta": 0.83,
    }
    h = hint.strip().lower()
    if h in named:
        return named[h]
    if h.startswith("#") and len(h) == 7:
        rgb = np.array([[int(h[i : i + 2], 16) for i in (1, 3, 5)]], dtype=np.uint8)
        return float(rgb_to_hsl(rgb)[0, 0])
    return None


def _hue_distance(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def _match_clusters_to_groups(
    clusters: list,
    features,
    meta: PlotMetadata,
) -> dict[int, int]:
    """Cluster label -> group index, by color hints or by vertical order."""
    hints = [_parse_color_hint(g.color_hint) for g in meta.groups]
    K = len(clusters)
    if all(h is not None for h in hints) and K == len(hints):
        medoid_hues = [float(features.hsl[c.medoid_index, 0]) for c in clusters]
        best_perm, best_cost = None, None
        for perm in itertools.permutations(range(K)):
            cost = sum(_hue_distance(medoid_hues[ci], hints[perm[ci]]) for ci in range(K))
            if best_cost is None or cost < best_cost:
                best_perm, best_cost = perm, cost
        return {clusters[ci].label: best_perm[ci] for ci in range(K)}
    # Fallback: top curve (smallest mean v) is the first listed group.
    mean_v = [(float(features.uv[c.indices, 1].mean()), c.label) for c in clusters]
    ordered = [label for _, label in sorted(mean_v)]
    return {label: gi for gi, label in enumerate(ordered)}


def _draw_overlay(
    image: RasterImage,
    records_by_group: dict[str, list[IPDRecord]],
    geom: AxisGeometry,
    x_range: AxisRange,
    y_range: AxisRange,
) -> RasterImage:
    """Reconstructed KM steps drawn in green over the prepared image."""
    img = image.to_pil().copy()
    draw = ImageDraw.Draw(img)
    for records in records_by_group.values():
        curve = km_estimate(records)
        t_last = max(r.time for r in records)
        pts = [(x_range.min, 1.0)]
        s_prev = 1.0
        for t, s in zip(curve.step_times, curve.probabilities):
            pts.extend([(float(t), s_prev), (float(t), float(s))])
            s_prev = float(s)
        pts.append((t_last, s_prev))
        pix = [inverse_calibrate(t, s, geom, x_range, y_range) for t, s in pts]
        draw.line(pix, fill=(0, 200, 0), width=2)
    return RasterImage.from_pil(img)


def run_pipeline(
    image: RasterImage | str | Path,
    edits: list[RegionMask] | str | bytes | None,
    config: PipelineConfig,
    store: JobStore | None = None,
    job: Job | None = None,
) -> dict:
    """Run every stage, persisting artifacts; fails fast with the stage name."""
    store = store or JobStore()
    job = job or store.create()
    if isinstance(image, (str, Path)):
        image = load_image(image)
    masks = parse_edits(edits) if isinstance(edits, (str, bytes)) else list(edits or [])
    provider = config.resolve_provider()
    engine = config.resolve_ocr()

    save_png(image, job.record("input"))
    job.record("edits").write_text(edits_to_json(masks))
    job.persist()

    stage = "edits"
    try:
        edited = apply_edits(image, masks)

        stage = "enhance"
        prepped = enhance(edited, resize_target=config.resize_target)
        save_png(prepped, job.record("prepped"))

        stage = "validated"
        report = validate_input(prepped, provider)
        if not report.ok and not config.force:
            raise KmgptError(
                "input validation failed: "
                + "; ".join(f"{i.component}: {i.message}" for i in report.issues)
            )
        job.advance("validated")

        stage = "axes"
        geom = locate_axes(prepped)

        stage = "ocr"
        regions = _label_regions(prepped, geom)
        tokens = []
        if regions["x_labels"]:
            tokens += run_ocr(prepped, regions["x_labels"], "axis-labels", engine)
        if regions["y_labels"]:
            tokens += run_ocr(prepped, regions["y_labels"], "axis-labels", engine)
        if regions["risk_table"]:
            tokens += run_ocr(prepped, regions["risk_table"], "risk-table", engine)

        stage = "ranges"
        x_ticks = tick_tokens_from_ocr(tokens, geom, "x")
        ocr_x_range = detect_ranges(x_ticks, "x")

        stage = "metadata"
        meta = extract_metadata(prepped, tokens, provider, ocr_x_range=ocr_x_range)
        job.record("metadata").write_text(json.dumps(meta.to_dict(), indent=2))
        job.advance("prepared")

        x_range, y_range = meta.x_range(), meta.y_range()

        stage = "extract"
        features = curvemod.extract_features(prepped, geom)
        # Balanced standardized HSL: measured curve palettes separate by hue,
        # while the saturation/lightness distributions of distinct curves
        # overlap almost entirely, so the x100 chroma upweighting is left off.
        clusters = curvemod.cluster_curves(
            features, K=meta.num_curves, enhanced=False, seed=config.seed
        )
        labels = np.empty(len(features), dtype=int)
        for c in clusters:
            labels[c.indices] = c.label
        k_nn = min(curvemod.CONSENSUS_K, len(features) - 1)
        all_scores = curvemod.consensus_scores(features.uv.astype(float), labels, k=k_nn)

        group_of = _match_clusters_to_groups(clusters, features, meta)
        traces = []
        for c in clusters:
            pts = features.uv[c.indices].astype(float)
            path = curvemod.trace_path(pts, geom)
            score_lookup = {
                (float(u), float(v)): s
                for (u, v), s in zip(pts, all_scores[c.indices])
            }
            path_scores = np.array([score_lookup[(p[0], p[1])] for p in path])
            points, point_scores = curvemod.path_to_points(path, geom, x_range, y_range, path_scores)
            traces.append(
                curvemod.CurveTrace(
                    group=meta.groups[group_of[c.label]].label,
                    points=points,
                    pixel_path=path,
                    scores=point_scores,
                )
            )

        stage = "repair"
        traces = curvemod.repair_overlaps(traces)
        job.record("traces").write_text(curvemod.traces_to_json(traces))
        job.advance("extracted")

        stage = "reconstruct"
        group_order = [g.label for g in meta.groups]
        records_by_group: dict[str, list[IPDRecord]] = {}
        digitized: dict[str, DigitizedCurve] = {}
        for trace in sorted(traces, key=lambda tr: group_order.index(tr.group)):
            gi = group_order.index(trace.group)
            curve = DigitizedCurve.from_noisy(trace.points, group=trace.group)
            digitized[trace.group] = curve
            records_by_group[trace.group] = reconstruct_ipd(curve, meta.risk_table.row(gi))
        all_records = [r for recs in records_by_group.values() for r in recs]
        write_ipd_csv(all_records, job.record("ipd"))

        stage = "overlay"
        overlays = {
            g: overlay_check(digitized[g], records_by_group[g], config.overlay_tolerance)
            for g in records_by_group
        }
        overlay_img = _draw_overlay(prepped, records_by_group, geom, x_range, y_range)
        save_png(overlay_img, job.record("overlay"))

        report_doc = {
            "job_id": job.id,
            "seed": config.seed,
            "provider_kind": config.provider_kind if config.provider is None else "custom",
            "prompt_hashes": _prompt_hashes(),
            "validation": report.to_dict(),
            "overlay": {g: {"max_gap": o["max_gap"], "pass": o["pass"]} for g, o in overlays.items()},
            "groups": group_order,
            "n_records": len(all_records),
        }
        job.record("report").write_text(json.dumps(report_doc, indent=2))
        job.advance("reconstructed")
        return {
            "job": job,
            "ipd": all_records,
            "records_by_group": records_by_group,
            "metadata": meta,
            "report": report_doc,
            "overlay_pass": all(o["pass"] for o in overlays.values()),
        }
    except Exception as exc:
        job.fail(f"{stage}: {type(exc).__name__}: {exc}")
        raise PipelineStageError(stage, exc) from exc


def bench_pipeline_adapter(config_base: PipelineConfig | None = None):
    """Adapter matching synthbench.BenchPipeline, using the sidecar provider."""

    def run(png_path: Path, sidecar_path: Path, seed: int, workdir: Path):
        config = PipelineConfig(
            provider_kind="sidecar",
            sidecar_path=sidecar_path,
            seed=seed,
            ocr_engine=(config_base.ocr_engine if config_base else None),
        )
        store = JobStore(workdir / "jobs")
        result = run_pipeline(load_image(png_path), None, config, store=store)
        return result["ipd"], result["overlay_pass"]

    return run
