"""Job-oriented HTTP API: upload a gallery, compute masks, preview and
override matches, run the guided transfer with streamed progress.

Persistence is a content-addressed blob store plus one JSON document per
job; progress events append to a per-job JSONL log that the SSE endpoint
replays, so a reconnecting client reconstructs the full run.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from fastapi import FastAPI, Form, Request, UploadFile
from fastapi.responses import JSONResponse, Response, StreamingResponse

from . import pipeline
from .clustering import ClusterMask
from .errors import InvalidArgumentError, StateConflictError, StyleGalleryError
from .maskio import image_from_bytes, image_to_png_bytes, mask_sidecar, mask_to_png_bytes
from .matching import MatchTable, apply_overrides

_STATES = ("created", "masked", "matched", "running", "done", "failed")


@dataclass
class TransferJob:
    id: str
    state: str
    content_blob: str
    style_blobs: dict[str, str]  # image key -> blob id
    config: dict
    version: int = 0
    masks: dict[str, dict] = field(default_factory=dict)  # image key -> {blob, sidecar}
    matches: dict | None = None
    progress: dict = field(default_factory=lambda: {"step": 0, "total": 0, "last": None})
    result_blob: str | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TransferJob":
        return cls(**data)

    def public(self) -> dict:
        doc = self.as_dict()
        doc["style_images"] = sorted(self.style_blobs)
        return doc


class JobStore:
    """Blob store + one JSON document per job, with optimistic versioning."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "blobs").mkdir(parents=True, exist_ok=True)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        (self.root / "events").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    # -- blobs --------------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.root / "blobs" / digest
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.rename(path)
        return digest

    def get_blob(self, blob_id: str) -> bytes:
        return (self.root / "blobs" / blob_id).read_bytes()

    # -- jobs ---------------------------------------------------------------

    def _job_path(self, job_id: str) -> Path:
        return self.root / "jobs" / f"{job_id}.json"

    def load(self, job_id: str) -> TransferJob:
        path = self._job_path(job_id)
        if not path.exists():
            raise KeyError(job_id)
        return TransferJob.from_dict(json.loads(path.read_text()))

    def save(self, job: TransferJob) -> TransferJob:
        """Compare-and-swap on the version counter."""
        with self._lock:
            path = self._job_path(job.id)
            if path.exists():
                current = json.loads(path.read_text())["version"]
                if current != job.version:
                    raise StateConflictError(
                        f"job {job.id} was modified concurrently (version {current}, had {job.version})"
                    )
            job.version += 1
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(job.as_dict()))
            tmp.rename(path)
            return job

    # -- events ---------------------------------------------------------------

    def events_path(self, job_id: str) -> Path:
        return self.root / "events" / f"{job_id}.jsonl"

    def reset_events(self, job_id: str) -> None:
        self.events_path(job_id).write_text("")

    def append_event(self, job_id: str, event: dict) -> None:
        with open(self.events_path(job_id), "a") as fh:
            fh.write(json.dumps(event) + "\n")

    def read_events(self, job_id: str) -> list[dict]:
        path = self.events_path(job_id)
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


class _Cancelled(Exception):
    pass


@dataclass
class _Runner:
    thread: threading.Thread | None = None
    cancel: threading.Event = field(default_factory=threading.Event)
    generation: int = 0


class JobService:
    """Job lifecycle behind the HTTP layer; also usable directly in tests."""

    def __init__(self, data_dir: str | Path, default_config: dict | None = None):
        self.store = JobStore(data_dir)
        self.default_config = default_config or {}
        self._runners: dict[str, _Runner] = {}
        self._runner_lock = threading.Lock()

    # -- helpers ---------------------------------------------------------------

    def _image(self, key: str, blob_id: str, role: str):
        return image_from_bytes(self.store.get_blob(blob_id), image_id=key, role=role)

    def _backend(self, job: TransferJob):
        return pipeline.backend_from_config(job.config)

    @staticmethod
    def _require_state(job: TransferJob, *allowed: str) -> None:
        if job.state not in allowed:
            raise StateConflictError(
                f"job {job.id} is in state {job.state!r}; expected one of {allowed}"
            )

    # -- lifecycle ---------------------------------------------------------------

    def create_job(self, content: bytes, styles: list[bytes], config: dict | None = None) -> TransferJob:
        if len(styles) < 1:
            raise InvalidArgumentError("at least one style image is required")
        merged = pipeline.merge_config({**self.default_config, **(config or {})})
        content_img = image_from_bytes(content, image_id="content")  # validates decodability
        content_blob = self.store.put_blob(image_to_png_bytes(content_img.pixels))
        style_blobs = {}
        for i, raw in enumerate(styles):
            key = f"style-{i}"
            img = image_from_bytes(raw, image_id=key, role="style")
            style_blobs[key] = self.store.put_blob(image_to_png_bytes(img.pixels))
        job = TransferJob(
            id=uuid.uuid4().hex[:12],
            state="created",
            content_blob=content_blob,
            style_blobs=style_blobs,
            config=merged,
        )
        return self.store.save(job)

    def compute_masks(self, job_id: str) -> TransferJob:
        job = self.store.load(job_id)
        self._require_state(job, "created")
        backend = self._backend(job)
        bundles = self._compute_bundles(backend, job)
        masks = {}
        for key, bundle in bundles.items():
            blob = self.store.put_blob(mask_to_png_bytes(bundle.mask))
            masks[key] = {"blob": blob, "sidecar": mask_sidecar(bundle.mask, job.config["cluster"])}
        job.masks = masks
        job.state = "masked"
        return self.store.save(job)

    def _compute_bundles(self, backend, job: TransferJob) -> dict:
        content = self._image("content", job.content_blob, "content")
        bundles = {"content": pipeline.compute_mask_bundle(backend, content, job.config)}
        for key in sorted(job.style_blobs):
            img = self._image(key, job.style_blobs[key], "style")
            bundles[key] = pipeline.compute_mask_bundle(backend, img, job.config)
        return bundles

    def _rebuild_bundles(self, backend, job: TransferJob) -> dict:
        """Bundles around the persisted masks (no re-clustering)."""
        bundles = {}
        for key in ["content", *sorted(job.style_blobs)]:
            role = "content" if key == "content" else "style"
            blob = job.content_blob if key == "content" else job.style_blobs[key]
            img = self._image(key, blob, role)
            meta = job.masks[key]["sidecar"]
            labels = np.asarray(
                Image.open(io.BytesIO(self.store.get_blob(job.masks[key]["blob"]))),
                dtype=np.int64,
            )
            mask = ClusterMask(
                image_id=key,
                labels=labels,
                n_clusters=int(meta["n_clusters"]),
                provenance=meta.get("provenance", "auto"),
            )
            bundles[key] = pipeline.rebuild_bundle(backend, img, mask, job.config)
        return bundles

    def preview_matches(self, job_id: str) -> TransferJob:
        job = self.store.load(job_id)
        self._require_state(job, "masked", "matched")
        backend = self._backend(job)
        bundles = self._rebuild_bundles(backend, job)
        styles = [bundles[k] for k in sorted(job.style_blobs)]
        table = pipeline.compute_matches(bundles["content"], styles, job.config)
        job.matches = table.as_dict()
        job.state = "matched"
        return self.store.save(job)

    def set_overrides(self, job_id: str, overrides: list[dict]) -> TransferJob:
        job = self.store.load(job_id)
        self._require_state(job, "matched")
        backend = self._backend(job)
        bundles = self._rebuild_bundles(backend, job)
        styles = [bundles[k] for k in sorted(job.style_blobs)]
        pooled = [d for b in styles for d in b.descriptors]
        table = MatchTable.from_dict(job.matches)
        table = apply_overrides(
            table, overrides, bundles["content"].descriptors, pooled,
            pipeline.similarity_config(job.config),
        )
        job.matches = table.as_dict()
        return self.store.save(job)

    # -- running ---------------------------------------------------------------

    def run(self, job_id: str, wait: bool = False) -> TransferJob:
        job = self.store.load(job_id)
        self._require_state(job, "matched", "running", "done", "failed")
        if job.matches is None:
            raise StateConflictError("matches missing; preview them first")

        with self._runner_lock:
            runner = self._runners.get(job_id)
            if runner and runner.thread and runner.thread.is_alive():
                runner.cancel.set()
                runner.thread.join(timeout=30)
            new_runner = _Runner(generation=(runner.generation + 1) if runner else 1)
            self._runners[job_id] = new_runner

        job = self.store.load(job_id)
        total = int(job.config["transfer"]["opt_steps"])
        job.state = "running"
        job.progress = {"step": 0, "total": total, "last": None}
        job.result_blob = None
        job.error = None
        job = self.store.save(job)
        self.store.reset_events(job_id)

        thread = threading.Thread(
            target=self._run_worker, args=(job_id, new_runner), daemon=True
        )
        new_runner.thread = thread
        thread.start()
        if wait:
            thread.join()
            return self.store.load(job_id)
        return job

    def _current(self, job_id: str, runner: _Runner) -> bool:
        with self._runner_lock:
            return self._runners.get(job_id) is runner

    def _run_worker(self, job_id: str, runner: _Runner) -> None:
        try:
            job = self.store.load(job_id)
            backend = self._backend(job)
            bundles = self._rebuild_bundles(backend, job)
            styles = [bundles[k] for k in sorted(job.style_blobs)]
            matches = MatchTable.from_dict(job.matches)
            total = int(job.config["transfer"]["opt_steps"])

            def on_step(report, _latent):
                if runner.cancel.is_set():
                    raise _Cancelled()
                event = {
                    "type": "progress",
                    "step": report.step,
                    "rsl": report.rsl,
                    "gcl": report.gcl,
                    "total": report.total,
                    "percent": 100.0 * report.step / total,
                }
                self.store.append_event(job_id, event)
                current = self.store.load(job_id)
                current.progress = {"step": report.step, "total": total, "last": event}
                self.store.save(current)

            image, _reports = pipeline.run_transfer(
                backend, bundles["content"], styles, matches, job.config,
                on_step=on_step, job_id=job_id,
            )
            if not self._current(job_id, runner):
                return
            blob = self.store.put_blob(image_to_png_bytes(image))
            job = self.store.load(job_id)
            job.state = "done"
            job.result_blob = blob
            # terminal event precedes the state flip so stream readers always
            # observe it before deciding the log is drained
            self.store.append_event(
                job_id, {"type": "done", "result_uri": f"/jobs/{job_id}/result"}
            )
            self.store.save(job)
        except _Cancelled:
            pass  # superseded by a newer run
        except Exception as exc:  # stage failure -> failed state with diagnostic
            if not self._current(job_id, runner):
                return
            try:
                job = self.store.load(job_id)
                job.state = "failed"
                job.error = str(exc)
                self.store.append_event(job_id, {"type": "failed", "error": str(exc)})
                self.store.save(job)
            except Exception:
                pass

    # -- events ---------------------------------------------------------------

    def stream_events(self, job_id: str, poll: float = 0.05, timeout: float = 300.0):
        """Yield event dicts: full replay, then follow until terminal."""
        self.store.load(job_id)  # 404 on unknown job
        sent = 0
        deadline = time.monotonic() + timeout
        while True:
            events = self.store.read_events(job_id)
            for event in events[sent:]:
                yield event
            sent = len(events)
            if sent and events[-1]["type"] in ("done", "failed"):
                return
            if self.store.load(job_id).state not in ("running",):
                # not running and log is drained: nothing more will arrive
                if sent == len(self.store.read_events(job_id)):
                    return
            if time.monotonic() > deadline:
                return
            time.sleep(poll)


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------


def create_app(data_dir: str | Path | None = None, default_config: dict | None = None) -> FastAPI:
    data_dir = data_dir or os.environ.get("STYLEGALLERY_DATA_DIR", "./stylegallery-data")
    env_backend = os.environ.get("STYLEGALLERY_BACKEND")
    base_config = dict(default_config or {})
    if env_backend and "backend" not in base_config:
        base_config["backend"] = {"kind": env_backend}

    app = FastAPI(title="stylegallery", version="0.1.0")
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    service = JobService(data_dir, base_config)
    app.state.service = service

    @app.exception_handler(StyleGalleryError)
    async def _domain_error(_req: Request, exc: StyleGalleryError):
        status = 409 if isinstance(exc, StateConflictError) else 422
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.exception_handler(KeyError)
    async def _missing(_req: Request, exc: KeyError):
        return JSONResponse(status_code=404, content={"error": f"job {exc.args[0]!r} not found"})

    @app.post("/jobs")
    async def create_job(
        content: UploadFile, styles: list[UploadFile], config: str = Form("{}")
    ):
        try:
            cfg = json.loads(config)
        except json.JSONDecodeError as exc:
            return JSONResponse(status_code=422, content={"error": f"bad config JSON: {exc}"})
        style_bytes = [await s.read() for s in styles]
        job = service.create_job(await content.read(), style_bytes, cfg)
        return job.public()

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return service.store.load(job_id).public()

    @app.post("/jobs/{job_id}/masks")
    def compute_masks(job_id: str):
        return service.compute_masks(job_id).public()

    @app.get("/jobs/{job_id}/masks")
    def get_masks(job_id: str):
        job = service.store.load(job_id)
        return {
            key: {"sidecar": m["sidecar"], "png": f"/jobs/{job_id}/masks/{key}.png"}
            for key, m in job.masks.items()
        }

    @app.get("/jobs/{job_id}/masks/{key}.png")
    def get_mask_png(job_id: str, key: str):
        job = service.store.load(job_id)
        if key not in job.masks:
            return JSONResponse(status_code=404, content={"error": f"no mask {key!r}"})
        return Response(content=service.store.get_blob(job.masks[key]["blob"]), media_type="image/png")

    @app.post("/jobs/{job_id}/matches/preview")
    def preview(job_id: str):
        return service.preview_matches(job_id).public()

    @app.put("/jobs/{job_id}/matches")
    async def put_matches(job_id: str, request: Request):
        body = await request.json()
        overrides = body.get("overrides", body if isinstance(body, list) else [])
        return service.set_overrides(job_id, overrides).public()

    @app.post("/jobs/{job_id}/run")
    def run(job_id: str):
        return service.run(job_id).public()

    @app.get("/jobs/{job_id}/events")
    def events(job_id: str):
        def sse():
            for event in service.stream_events(job_id):
                yield f"data: {json.dumps(event)}\n\n"

        return StreamingResponse(sse(), media_type="text/event-stream")

    @app.get("/jobs/{job_id}/result")
    def result(job_id: str):
        job = service.store.load(job_id)
        if job.state != "done" or not job.result_blob:
            return JSONResponse(status_code=409, content={"error": f"job is {job.state}, not done"})
        return Response(content=service.store.get_blob(job.result_blob), media_type="image/png")

    return app


def main() -> None:  # pragma: no cover - exercised via `stylegallery serve`
    import uvicorn

    port = int(os.environ.get("STYLEGALLERY_PORT", "8000"))
    uvicorn.run(create_app(), host="0.0.0.0", port=port)
