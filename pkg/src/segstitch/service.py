"""HTTP backend for the interactive resolution tuner.

The service owns one scene (synthesized from the run config or loaded from
a scene directory) and its simulated posterior samples.  /segment answers
region-level questions deterministically and without side effects;
/commit starts the single allowed full-image job, polled via /job/:id.
All responses are deterministic given the seeds in play.
"""
from __future__ import annotations

import dataclasses
import io as _io
import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from pydantic import BaseModel

from . import io as sio
from .config import RunConfig
from .errors import ParameterError, SegstitchError
from .pipeline import segment_consensus, segment_region, simulate_samples, synth_scene

API_VERSION = "v1"


class Region(BaseModel):
    x: int
    y: int
    w: int
    h: int


class SegmentRequest(BaseModel):
    region: Region
    gamma: float
    seed: int = 0


class CommitRequest(BaseModel):
    gamma: float


class ServiceState:
    def __init__(self, config: RunConfig, scene_dir: str | None = None):
        self.config = config
        if scene_dir is not None:
            root = Path(scene_dir)
            stored = root / "config.json"
            if stored.exists():
                self.config = RunConfig.load(stored)
            manifest = json.loads((root / "manifest.json").read_text())
            entry = manifest["scenes"][0]
            self.image = sio.read_image_png(root / entry["files"]["image"])[..., None]
            bundle = synth_scene(self.config, entry["index"])
            self.stacks = simulate_samples(self.config, bundle, entry["index"])
        else:
            bundle = synth_scene(self.config, 0)
            self.image = bundle.image
            self.stacks = simulate_samples(self.config, bundle, 0)
        self.jobs: dict[str, dict] = {}
        self.job_lock = threading.Lock()
        self.active_job: str | None = None

    @property
    def dims(self) -> tuple[int, int]:
        return self.image.shape[:2]


def create_app(config: RunConfig, scene_dir: str | None = None,
               frontend_dir: str | None = None) -> FastAPI:
    state = ServiceState(config, scene_dir=scene_dir)
    app = FastAPI(title="segstitch tuner API", version=API_VERSION)
    prefix = f"/{API_VERSION}"
    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=frontend_dir, html=True), name="tuner")

    @app.get(prefix + "/image/meta")
    def image_meta():
        h, w = state.dims
        grid = sorted(state.config.gamma_grid)
        return {
            "height": h,
            "width": w,
            "channels": int(state.image.shape[2]) if state.image.ndim == 3 else 1,
            "seed": state.config.seed,
            "gamma": state.config.gamma,
            "gamma_min": grid[0],
            "gamma_max": grid[-1],
            "n_samples": len(state.stacks),
            "api_version": API_VERSION,
        }

    def _check_region(x: int, y: int, w: int, h: int) -> None:
        ih, iw = state.dims
        if w < 1 or h < 1 or x < 0 or y < 0 or x + w > iw or y + h > ih:
            raise HTTPException(status_code=400,
                                detail=f"region {(x, y, w, h)} outside {iw}x{ih} image")

    @app.get(prefix + "/region")
    def region_tile(x: int, y: int, w: int, h: int):
        _check_region(x, y, w, h)
        tile = state.image[y:y + h, x:x + w]
        buf = _io.BytesIO()
        from PIL import Image

        data = (np.clip(tile[..., 0], 0.0, 1.0) * 65535).round().astype(np.uint16)
        Image.fromarray(data).save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post(prefix + "/segment")
    def segment(req: SegmentRequest):
        _check_region(req.region.x, req.region.y, req.region.w, req.region.h)
        if req.gamma <= 0:
            raise HTTPException(status_code=400, detail="gamma must be positive")
        try:
            result = segment_region(
                state.config, state.stacks,
                (req.region.x, req.region.y, req.region.w, req.region.h),
                req.gamma, req.seed,
            )
        except ParameterError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {
            "labels": sio.labels_to_runs(result.label_map),
            "n_communities": result.n_communities,
            "nmi": result.nmi,
            "gamma": result.gamma,
            "seed": req.seed,
        }

    def _run_job(job_id: str, gamma: float):
        try:
            cfg = dataclasses.replace(state.config, gamma=gamma)
            labels = segment_consensus(cfg, state.stacks, scene_index=0)
            label_map = labels.to_label_map(state.dims)
            state.jobs[job_id].update(
                status="done",
                labels=sio.labels_to_runs(label_map),
                n_communities=labels.n_communities,
            )
        except SegstitchError as exc:
            state.jobs[job_id].update(status="failed", error=str(exc))
        finally:
            with state.job_lock:
                state.active_job = None

    @app.post(prefix + "/commit")
    def commit(req: CommitRequest):
        if req.gamma <= 0:
            raise HTTPException(status_code=400, detail="gamma must be positive")
        with state.job_lock:
            if state.active_job is not None:
                raise HTTPException(status_code=409, detail="a job is already running")
            job_id = uuid.uuid4().hex
            state.active_job = job_id
            state.jobs[job_id] = {"status": "running", "gamma": req.gamma}
        thread = threading.Thread(target=_run_job, args=(job_id, req.gamma), daemon=True)
        state.jobs[job_id]["_thread"] = thread
        thread.start()
        return {"job_id": job_id, "status": "running"}

    @app.get(prefix + "/job/{job_id}")
    def job_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="unknown job")
        return {k: v for k, v in job.items() if not k.startswith("_")}

    app.state.segstitch = state
    return app
