"""End-to-end pipeline, job store, HTTP API, and CLI surfaces."""

import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from kmgpt.errors import PipelineStageError
from kmgpt.metadata import ValidationReport, write_sidecar
from kmgpt.pipeline import STAGE_FILES, JobStore, PipelineConfig, run_pipeline
from kmgpt.raster import encode_png, save_png
from kmgpt.server import create_app
from kmgpt.survival import km_estimate, risk_counts


def test_pipeline_completes_with_overlay_pass(pipeline_run, medium_render):
    rendered, _ = medium_render
    job = pipeline_run["job"]
    assert job.state == "reconstructed"
    assert pipeline_run["overlay_pass"]
    for stage in ("input", "edits", "prepped", "metadata", "traces", "ipd", "overlay", "report"):
        assert (job.dir / STAGE_FILES[stage]).exists()
    # reconstructed IPD anchors the rendered risk table exactly
    counts = risk_counts(pipeline_run["ipd"], rendered.risk_table.anchor_times)
    assert tuple(counts) == rendered.risk_table.counts[0]


def test_pipeline_metadata_echoes_sidecar(pipeline_run, medium_render):
    rendered, _ = medium_render
    assert pipeline_run["metadata"] == rendered.metadata


def test_pipeline_deterministic_artifacts(fixture_dir):
    outs = []
    for run in range(2):
        config = PipelineConfig(
            provider_kind="sidecar", sidecar_path=fixture_dir / "sidecar.json", seed=7
        )
        store = JobStore(fixture_dir / f"det{run}")
        result = run_pipeline(fixture_dir / "plot.png", None, config, store=store)
        job = result["job"]
        outs.append(
            (
                (job.dir / STAGE_FILES["ipd"]).read_bytes(),
                (job.dir / STAGE_FILES["prepped"]).read_bytes(),
                (job.dir / STAGE_FILES["traces"]).read_bytes(),
            )
        )
    assert outs[0] == outs[1]


def test_pipeline_fails_at_validation_gate(tmp_path, medium_render):
    rendered, _ = medium_render
    save_png(rendered.image, tmp_path / "plot.png")
    doc = {
        "validation": {
            "ok": False,
            "issues": [{"component": "risk-table", "message": "missing", "suggestion": "crop"}],
        },
        "metadata": rendered.metadata.to_dict(),
    }
    (tmp_path / "sidecar.json").write_text(json.dumps(doc))
    config = PipelineConfig(provider_kind="sidecar", sidecar_path=tmp_path / "sidecar.json")
    store = JobStore(tmp_path / "jobs")
    with pytest.raises(PipelineStageError) as err:
        run_pipeline(tmp_path / "plot.png", None, config, store=store)
    assert err.value.stage == "validated"
    job_docs = list((tmp_path / "jobs").glob("*/job.json"))
    assert json.loads(job_docs[0].read_text())["state"] == "failed"

    # force pushes past the gate and completes
    config = PipelineConfig(
        provider_kind="sidecar", sidecar_path=tmp_path / "sidecar.json", force=True
    )
    result = run_pipeline(tmp_path / "plot.png", None, config, store=JobStore(tmp_path / "jobs2"))
    assert result["job"].state == "reconstructed"


def test_pipeline_two_groups_match_colors(two_group_render, tmp_path):
    rendered, truth_records = two_group_render
    save_png(rendered.image, tmp_path / "plot.png")
    write_sidecar(tmp_path / "sidecar.json", rendered.metadata, ValidationReport(ok=True))
    config = PipelineConfig(provider_kind="sidecar", sidecar_path=tmp_path / "sidecar.json", seed=3)
    result = run_pipeline(tmp_path / "plot.png", None, config, store=JobStore(tmp_path / "jobs"))
    assert set(result["records_by_group"]) == {"ARM A", "ARM B"}
    for gi, group in enumerate(["ARM A", "ARM B"]):
        got = risk_counts(result["records_by_group"][group], rendered.risk_table.anchor_times)
        assert tuple(got) == rendered.risk_table.counts[gi]
        # median survival of the reconstruction lands near the truth's
        truth_curve = rendered.truth[group]
        recon_curve = km_estimate(result["records_by_group"][group])
        t_eval = rendered.metadata.x_end * 0.4
        assert abs(
            float(truth_curve.evaluate([t_eval])[0]) - float(recon_curve.evaluate([t_eval])[0])
        ) < 0.03


def test_no_secret_material_persisted(tmp_path, medium_render, caplog):
    rendered, _ = medium_render
    save_png(rendered.image, tmp_path / "plot.png")
    write_sidecar(tmp_path / "sidecar.json", rendered.metadata, ValidationReport(ok=True))
    secret = "SECRET-API-KEY-12345XYZ"
    config = PipelineConfig(
        provider_kind="sidecar", sidecar_path=tmp_path / "sidecar.json",
        seed=1, api_key=secret,
    )
    with caplog.at_level("DEBUG"):
        run_pipeline(tmp_path / "plot.png", None, config, store=JobStore(tmp_path / "jobs"))
    for path in (tmp_path / "jobs").rglob("*"):
        if path.is_file():
            assert secret.encode() not in path.read_bytes(), path
    assert secret not in caplog.text


def test_job_store_roundtrip(tmp_path):
    store = JobStore(tmp_path)
    job = store.create()
    job.advance("validated")
    back = store.get(job.id)
    assert back.state == "validated"
    assert store.get("nope") is None
    with pytest.raises(ValueError):
        back.advance("created")  # no backward transitions


# --- HTTP API ----------------------------------------------------------------


@pytest.fixture()
def client(tmp_path):
    app = create_app(job_dir=tmp_path / "jobs", max_workers=2)
    with TestClient(app) as c:
        yield c


def _upload(client, rendered):
    resp = client.post(
        "/api/jobs", files={"file": ("plot.png", encode_png(rendered.image), "image/png")}
    )
    assert resp.status_code == 201
    return resp.json()["id"]


def _wait(client, job_id, timeout=120.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/jobs/{job_id}").json()
        if doc["state"] in ("reconstructed", "failed"):
            return doc
        time.sleep(0.3)
    raise TimeoutError(f"job {job_id} did not finish")


def test_api_upload_and_404(client, medium_render):
    rendered, _ = medium_render
    job_id = _upload(client, rendered)
    assert client.get(f"/api/jobs/{job_id}").status_code == 200
    assert client.get("/api/jobs/doesnotexist").status_code == 404
    assert client.get(f"/api/jobs/{job_id}/overlay.png").status_code == 404  # not ready
    assert client.post("/api/jobs", files={"file": ("x.png", b"junk", "image/png")}).status_code == 400


def test_api_full_run_and_artifacts(client, medium_render, fixture_dir):
    rendered, _ = medium_render
    job_id = _upload(client, rendered)
    edits = {"edits": []}
    assert client.post(f"/api/jobs/{job_id}/edits", json=edits).status_code == 200
    resp = client.post(
        f"/api/jobs/{job_id}/run",
        json={"provider": "sidecar", "sidecar_path": str(fixture_dir / "sidecar.json"), "seed": 7},
        headers={"X-Provider-Key": "browser-held-key"},
    )
    assert resp.status_code == 202
    doc = _wait(client, job_id)
    assert doc["state"] == "reconstructed"
    overlay = client.get(f"/api/jobs/{job_id}/overlay.png")
    assert overlay.status_code == 200 and overlay.content[:8] == b"\x89PNG\r\n\x1a\n"
    ipd = client.get(f"/api/jobs/{job_id}/ipd.csv")
    assert ipd.status_code == 200 and ipd.text.startswith("time,status,group")
    meta = client.get(f"/api/jobs/{job_id}/metadata.json").json()
    assert meta["x_end"] == rendered.metadata.x_end
    report = client.get(f"/api/jobs/{job_id}/report.json").json()
    assert report["overlay"]["ARM A"]["pass"] is True
    # the key travelled only in the request header
    job_dir = client.app.state.store.root / job_id
    for path in job_dir.rglob("*"):
        if path.is_file():
            assert b"browser-held-key" not in path.read_bytes()


def test_api_concurrent_jobs(client, medium_render, fixture_dir):
    rendered, _ = medium_render
    ids = [_upload(client, rendered) for _ in range(4)]
    for job_id in ids:
        resp = client.post(
            f"/api/jobs/{job_id}/run",
            json={
                "provider": "sidecar",
                "sidecar_path": str(fixture_dir / "sidecar.json"),
                "seed": 7,
                "resize_target": 800,
            },
        )
        assert resp.status_code == 202
    states = [_wait(client, job_id, timeout=300)["state"] for job_id in ids]
    assert states == ["reconstructed"] * 4
    assert len(set(ids)) == 4


# --- CLI ----------------------------------------------------------------------


def test_cli_run_and_validate(fixture_dir, tmp_path, capsys):
    from kmgpt.cli import main

    rc = main([
        "run", "--image", str(fixture_dir / "plot.png"),
        "--provider", "sidecar", "--sidecar", str(fixture_dir / "sidecar.json"),
        "--seed", "7", "--out", str(tmp_path / "jobs"),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "reconstructed" in out

    rc = main([
        "validate", "--image", str(fixture_dir / "plot.png"),
        "--provider", "sidecar", "--sidecar", str(fixture_dir / "sidecar.json"),
    ])
    assert rc == 0


def test_cli_bench_single_cell(tmp_path, capsys):
    from kmgpt.cli import main

    rc = main(["bench", "--cells", "MMM", "--reps", "1", "--seed", "3",
               "--out", str(tmp_path / "bench")])
    assert rc == 0
    assert (tmp_path / "bench" / "summary.csv").exists()
    assert "success 1/1" in capsys.readouterr().out


def test_cli_meta(tmp_path, capsys):
    from kmgpt.cli import main
    from kmgpt.survival import IPDRecord, write_ipd_csv

    rng = np.random.default_rng(4)
    for s in range(2):
        records = [IPDRecord(float(t), 1, "g") for t in rng.exponential(10, 60)]
        write_ipd_csv(records, tmp_path / f"study{s}.csv")
    rc = main([
        "meta", "--ipd", str(tmp_path / "study0.csv"), str(tmp_path / "study1.csv"),
        "--chains", "2", "--draws", "400", "--warmup", "400", "--seed", "2",
        "--rmst", "5,10", "--out", str(tmp_path / "meta"),
    ])
    assert rc == 0
    summary = json.loads((tmp_path / "meta" / "summary.json").read_text())
    assert "pooled_median" in summary and "rmst" in summary
    assert (tmp_path / "meta" / "draws.csv").exists()
    assert (tmp_path / "meta" / "survival_bands.csv").exists()
