"""HTTP enhancement service: async jobs, previews, bounded worker pool."""

from __future__ import annotations

import io
import queue
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, HTTPException, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image as PILImage

from .imaging import save_image
from .trainer import EnhanceModel, load_checkpoint

__all__ = ["ModelRegistry", "create_app", "PREVIEW_EVERY"]

PREVIEW_EVERY = 5
MAX_STEPS = 1000


class ModelRegistry:
    """model_id -> EnhanceModel, loading checkpoint paths lazily and caching."""

    def __init__(self, sources: dict[str, "EnhanceModel | str | Path"]):
        self._sources = dict(sources)
        self._cache: dict[str, EnhanceModel] = {}
        self._lock = threading.Lock()

    def ids(self) -> list[str]:
        return sorted(self._sources)

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._sources

    def get(self, model_id: str) -> EnhanceModel:
        with self._lock:
            if model_id not in self._cache:
                source = self._sources[model_id]
                self._cache[model_id] = (
                    source if isinstance(source, EnhanceModel)
                    else load_checkpoint(source))
            return self._cache[model_id]


@dataclass
class Job:
    id: str
    image: np.ndarray
    mask: np.ndarray | None
    lam: float
    guidance: float
    steps: int
    seed: int
    model_id: str
    status: str = "queued"
    progress: float = 0.0
    preview_png: bytes | None = None
    result_png: bytes | None = None
    error: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


def _bad_request(fieldname: str, message: str) -> HTTPException:
    return HTTPException(status_code=400,
                         detail={"field": fieldname, "message": message})


def _decode_image(data: bytes, fieldname: str) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as e:
        raise _bad_request(fieldname, f"cannot decode image: {e}") from e
    return arr


def _decode_mask(data: bytes) -> np.ndarray:
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except Exception as e:
        raise _bad_request("mask", f"cannot decode mask: {e}") from e
    return arr


def _encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    save_image(img, buf)
    return buf.getvalue()


def create_app(models: "ModelRegistry | dict", workers: int = 2,
               queue_capacity: int = 8, ui_dir: "str | Path | None" = None) -> FastAPI:
    """Build the service app. Worker threads start immediately."""
    registry = models if isinstance(models, ModelRegistry) else ModelRegistry(models)
    app = FastAPI(title="brightness-controllable enhancement service")
    jobs: dict[str, Job] = {}
    jobs_lock = threading.Lock()
    work_queue: queue.Queue = queue.Queue(maxsize=queue_capacity)

    def run_job(job: Job) -> None:
        with job.lock:
            job.status = "running"
        try:
            model = registry.get(job.model_id)

            def on_step(i: int, total: int, y0_img: np.ndarray) -> None:
                preview = None
                if i % PREVIEW_EVERY == 0 or i == total:
                    preview = _encode_png(y0_img)
                with job.lock:
                    job.progress = i / total
                    if preview is not None:
                        job.preview_png = preview

            out, _ = model.enhance(job.image, job.lam, mask=job.mask,
                                   s=job.guidance, steps=job.steps,
                                   seed=job.seed, on_step=on_step)
            png = _encode_png(out)
            with job.lock:
                job.result_png = png
                job.progress = 1.0
                job.status = "done"
        except Exception as e:
            with job.lock:
                job.status = "failed"
                job.error = f"{type(e).__name__}: {e}"

    def worker_loop() -> None:
        while True:
            job = work_queue.get()
            if job is None:
                return
            run_job(job)

    for _ in range(max(1, workers)):
        threading.Thread(target=worker_loop, daemon=True).start()

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/models")
    def list_models():
        out = []
        for model_id in registry.ids():
            model = registry.get(model_id)
            out.append({"model_id": model_id, "mask_mode": model.mask_mode,
                        "embed_dim": model.codebook.n})
        return out

    @app.post("/v1/enhance", status_code=202)
    async def enhance(request: Request,
                      image: UploadFile,
                      mask: UploadFile | None = None,
                      lam: str = Form(default=None, alias="lambda"),
                      guidance: str = Form(default="1.0"),
                      steps: str = Form(default="50"),
                      seed: str = Form(default=None),
                      model_id: str = Form(default="default")):
        if model_id not in registry:
            raise _bad_request("model_id", f"unknown model {model_id!r}")
        model = registry.get(model_id)

        if lam is None:
            raise _bad_request("lambda", "lambda is required")
        try:
            lam_val = float(lam)
        except ValueError:
            raise _bad_request("lambda", f"not a number: {lam!r}")
        if not 0.0 <= lam_val <= 1.0:
            raise _bad_request("lambda", f"must lie in [0,1], got {lam_val}")

        try:
            guidance_val = float(guidance)
        except ValueError:
            raise _bad_request("guidance", f"not a number: {guidance!r}")
        if guidance_val < 0:
            raise _bad_request("guidance", f"must be >= 0, got {guidance_val}")

        try:
            steps_val = int(steps)
        except ValueError:
            raise _bad_request("steps", f"not an integer: {steps!r}")
        if not 1 <= steps_val <= min(MAX_STEPS, model.schedule.T):
            raise _bad_request(
                "steps", f"must lie in [1, {min(MAX_STEPS, model.schedule.T)}]")

        if seed is None or seed == "":
            seed_val = int(np.random.SeedSequence().entropy % (2 ** 31))
        else:
            try:
                seed_val = int(seed)
            except ValueError:
                raise _bad_request("seed", f"not an integer: {seed!r}")

        img_arr = _decode_image(await image.read(), "image")

        mask_arr = None
        if mask is not None:
            mask_bytes = await mask.read()
            if mask_bytes:
                if not model.mask_mode:
                    raise _bad_request("mask", "model does not accept region masks")
                mask_arr = _decode_mask(mask_bytes)
                if mask_arr.shape != img_arr.shape[:2]:
                    raise _bad_request(
                        "mask", f"mask {mask_arr.shape} does not match "
                                f"image {img_arr.shape[:2]}")

        job = Job(id=uuid.uuid4().hex, image=img_arr, mask=mask_arr,
                  lam=lam_val, guidance=guidance_val, steps=steps_val,
                  seed=seed_val, model_id=model_id)
        with jobs_lock:
            jobs[job.id] = job
        try:
            work_queue.put_nowait(job)
        except queue.Full:
            with jobs_lock:
                del jobs[job.id]
            return JSONResponse(status_code=429,
                                content={"error": "job queue is full"})
        return {"job_id": job.id}

    def _get_job(job_id: str) -> Job:
        with jobs_lock:
            job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no job {job_id}")
        return job

    @app.get("/v1/jobs/{job_id}")
    def job_view(job_id: str):
        job = _get_job(job_id)
        with job.lock:
            view = {"status": job.status, "progress": job.progress}
            if job.preview_png is not None:
                view["preview_url"] = f"/v1/jobs/{job.id}/preview"
            if job.error is not None:
                view["error"] = job.error
        return view

    @app.get("/v1/jobs/{job_id}/preview")
    def job_preview(job_id: str):
        job = _get_job(job_id)
        with job.lock:
            png = job.preview_png
        if png is None:
            raise HTTPException(status_code=404, detail="no preview yet")
        return Response(content=png, media_type="image/png")

    @app.get("/v1/jobs/{job_id}/result")
    def job_result(job_id: str):
        job = _get_job(job_id)
        with job.lock:
            png = job.result_png
            status = job.status
        if status != "done" or png is None:
            raise HTTPException(status_code=404, detail=f"job is {status}")
        return Response(content=png, media_type="image/png")

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
