"""HTTP API over the job store, consumed by the browser UI.

Provider API keys arrive per request in the ``X-Provider-Key`` header and
are handed to the provider in memory only; they are never persisted or
logged. Jobs run on a bounded worker pool.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from fastapi import FastAPI, Header, HTTPException, Request, Response, UploadFile
from fastapi.responses import FileResponse, JSONResponse

from .pipeline import STAGE_FILES, JobStore, PipelineConfig, run_pipeline
from .raster import decode_image

ARTIFACT_ROUTES = {
    "overlay.png": ("overlay", "image/png"),
    "ipd.csv": ("ipd", "text/csv"),
    "metadata.json": ("metadata", "application/json"),
    "report.json": ("report", "application/json"),
}


def create_app(job_dir: str | Path | None = None, max_workers: int | None = None) -> FastAPI:
    store = JobStore(job_dir)
    pool = ThreadPoolExecutor(max_workers=max_workers or os.cpu_count() or 2)
    app = FastAPI(title="kmgpt")
    app.state.store = store
    app.state.pool = pool

    def get_job(job_id: str):
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="unknown job")
        return job

    @app.post("/api/jobs", status_code=201)
    async def create_job(file: UploadFile):
        data = await file.read()
        try:
            image = decode_image(data)
        except Exception as exc:  # noqa: BLE001
            raise HTTPException(status_code=400, detail=f"not a decodable image: {exc}")
        job = store.create()
        from .raster import save_png

        save_png(image, job.record("input"))
        job.persist()
        return {"id": job.id}

    @app.post("/api/jobs/{job_id}/edits")
    async def post_edits(job_id: str, request: Request):
        job = get_job(job_id)
        body = await request.body()
        from .prep import edits_to_json, parse_edits

        try:
            masks = parse_edits(body)
        except Exception as exc:  # noqa: BLE001
            raise HTTPException(status_code=400, detail=f"bad edits payload: {exc}")
        job.record("edits").write_text(edits_to_json(masks))
        job.persist()
        return {"ok": True, "count": len(masks)}

    @app.post("/api/jobs/{job_id}/run", status_code=202)
    async def run_job(
        job_id: str,
        request: Request,
        x_provider_key: str | None = Header(default=None),
    ):
        job = get_job(job_id)
        body = await request.json() if (await request.body()) else {}
        config = PipelineConfig(
            provider_kind=body.get("provider", "sidecar"),
            sidecar_path=body.get("sidecar_path"),
            seed=int(body.get("seed", 0)),
            force=bool(body.get("force", False)),
            resize_target=int(body.get("resize_target", 1600)),
            live_base_url=body.get("base_url", ""),
            live_model=body.get("model", ""),
            api_key=x_provider_key,
        )
        input_path = job.dir / STAGE_FILES["input"]
        if not input_path.exists():
            raise HTTPException(status_code=409, detail="job has no uploaded image")
        edits_path = job.dir / STAGE_FILES["edits"]
        edits = edits_path.read_text() if edits_path.exists() else None

        from .raster import load_image

        image = load_image(input_path)

        def work():
            try:
                run_pipeline(image, edits, config, store=store, job=job)
            except Exception:  # noqa: BLE001 - job.json carries the failure
                pass

        pool.submit(work)
        return {"id": job.id, "state": "running"}

    @app.get("/api/jobs/{job_id}")
    async def job_state(job_id: str):
        return JSONResponse(get_job(job_id).to_dict())

    @app.get("/api/jobs/{job_id}/{artifact}")
    async def job_artifact(job_id: str, artifact: str):
        if artifact not in ARTIFACT_ROUTES:
            raise HTTPException(status_code=404, detail="unknown artifact")
        job = get_job(job_id)
        stage, media_type = ARTIFACT_ROUTES[artifact]
        path = job.dir / STAGE_FILES[stage]
        if not path.exists():
            raise HTTPException(status_code=404, detail="artifact not ready")
        return FileResponse(path, media_type=media_type)

    @app.get("/healthz")
    async def healthz():
        return Response(content="ok", media_type="text/plain")

    return app


def serve(bind: str = "127.0.0.1:8000", job_dir: str | Path | None = None) -> None:
    """Run the API server (blocking)."""
    import uvicorn

    host, _, port = bind.partition(":")
    uvicorn.run(create_app(job_dir), host=host or "127.0.0.1", port=int(port or 8000))
