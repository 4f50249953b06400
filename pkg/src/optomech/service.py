"""HTTP service wrapping the experiment runner.

Long-running work (train, eval, baseline, sweep, two-phase) is
submitted as a job and executed on a small worker pool; clients poll
job status and fetch metrics when done. Export is synchronous. The CLI
is a thin client of this API and spawns a private in-process instance
when no server address is given.
"""

from __future__ import annotations

import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .config import ExperimentConfig, apply_overrides, from_dict, load_config, to_dict
from .runner import (
    EXPORT_KINDS,
    _read_metrics,
    evaluate,
    export_plot_data,
    sweep,
    train,
    two_phase,
)

JOB_KINDS = ("train", "eval", "baseline", "sweep", "two-phase")


class RunRequest(BaseModel):
    """Configuration by value or by file path, plus dotted overrides."""

    config: dict[str, Any] | None = None
    config_path: str | None = None
    overrides: list[str] = Field(default_factory=list)
    outdir: str | None = None


class EvalRequest(RunRequest):
    checkpoint: str | None = None


class SweepRequest(RunRequest):
    axis: str
    values: list[Any]
    checkpoint: str | None = None


class ExportRequest(BaseModel):
    run_dir: str
    kind: str
    out_path: str | None = None


class JobInfo(BaseModel):
    id: str
    kind: str
    status: str  # queued | running | succeeded | failed
    created_at: float
    started_at: float | None = None
    finished_at: float | None = None
    error: dict[str, str] | None = None
    result: dict[str, Any] | None = None


def _error_payload(exc: Exception) -> dict[str, str]:
    return {"error": type(exc).__name__, "message": str(exc)}


def resolve_config(request: RunRequest) -> ExperimentConfig:
    if (request.config is None) == (request.config_path is None):
        raise ValueError("give exactly one of config or config_path")
    if request.config_path is not None:
        return load_config(request.config_path, overrides=request.overrides)
    data = request.config
    if request.overrides:
        data = apply_overrides(data, request.overrides)
    return from_dict(data)


class JobManager:
    """Submits runner calls to a worker pool and tracks their lifecycle."""

    def __init__(self, max_workers: int = 2):
        self._pool = ThreadPoolExecutor(max_workers=max_workers)
        self._jobs: dict[str, JobInfo] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, fn) -> JobInfo:
        job = JobInfo(id=uuid.uuid4().hex[:12], kind=kind, status="queued", created_at=time.time())
        with self._lock:
            self._jobs[job.id] = job
        self._pool.submit(self._run, job.id, fn)
        return job

    def _run(self, job_id: str, fn) -> None:
        with self._lock:
            job = self._jobs[job_id]
            job.status = "running"
            job.started_at = time.time()
        try:
            result = fn()
        except Exception as exc:
            with self._lock:
                job.status = "failed"
                job.error = _error_payload(exc)
                job.finished_at = time.time()
            return
        with self._lock:
            job.status = "succeeded"
            job.result = result
            job.finished_at = time.time()

    def get(self, job_id: str) -> JobInfo:
        with self._lock:
            job = self._jobs.get(job_id)
        if job is None:
            raise KeyError(job_id)
        return job

    def list(self) -> list[JobInfo]:
        with self._lock:
            return sorted(self._jobs.values(), key=lambda j: j.created_at)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)


def _run_summary(log, outdir: Path | None = None) -> dict[str, Any]:
    out = {"summary": log.summary}
    if outdir is not None:
        out["outdir"] = str(outdir)
    return out


def create_app(max_workers: int = 2) -> FastAPI:
    app = FastAPI(title="optomech control workbench", version="0.1.0")
    manager = JobManager(max_workers=max_workers)
    app.state.jobs = manager

    def _resolve(request: RunRequest) -> ExperimentConfig:
        try:
            return resolve_config(request)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=_error_payload(exc)) from exc

    def _outdir(config: ExperimentConfig, request: RunRequest) -> Path:
        return Path(request.outdir) if request.outdir else Path(config.outdir) / config.name

    @app.get("/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.post("/jobs/train", response_model=JobInfo)
    def submit_train(request: RunRequest) -> JobInfo:
        config = _resolve(request)
        out = _outdir(config, request)

        def work():
            log = train(config, outdir=out)
            return _run_summary(log, out)

        return manager.submit("train", work)

    @app.post("/jobs/eval", response_model=JobInfo)
    def submit_eval(request: EvalRequest) -> JobInfo:
        config = _resolve(request)
        out = _outdir(config, request)

        def work():
            log = evaluate(config, checkpoint=request.checkpoint, outdir=out)
            return _run_summary(log, out)

        return manager.submit("eval", work)

    @app.post("/jobs/baseline", response_model=JobInfo)
    def submit_baseline(request: RunRequest) -> JobInfo:
        config = _resolve(request)
        if config.trainable:
            raise HTTPException(
                status_code=422,
                detail={"error": "ValueError", "message": "baseline jobs take bayesian or random configs"},
            )
        out = _outdir(config, request)

        def work():
            log = train(config, outdir=out)
            return _run_summary(log, out)

        return manager.submit("baseline", work)

    @app.post("/jobs/sweep", response_model=JobInfo)
    def submit_sweep(request: SweepRequest) -> JobInfo:
        config = _resolve(request)
        out = Path(request.outdir) if request.outdir else Path(config.outdir) / f"{config.name}_sweep"

        def work():
            results = sweep(config, request.axis, request.values, outdir=out, checkpoint=request.checkpoint)
            return {"outdir": str(out), "points": results}

        return manager.submit("sweep", work)

    @app.post("/jobs/two-phase", response_model=JobInfo)
    def submit_two_phase(request: RunRequest) -> JobInfo:
        config = _resolve(request)
        out = _outdir(config, request)

        def work():
            result = two_phase(config, outdir=out)
            return {
                "outdir": str(out),
                "phase1": result["phase1"].summary,
                "phase2": result["phase2"].summary,
                "target_episode": result["target_episode"],
            }

        return manager.submit("two-phase", work)

    @app.post("/export")
    def run_export(request: ExportRequest) -> dict[str, str]:
        if request.kind not in EXPORT_KINDS:
            raise HTTPException(
                status_code=422,
                detail={"error": "ValueError", "message": f"kind must be one of {EXPORT_KINDS}"},
            )
        try:
            dest = export_plot_data(request.run_dir, request.kind, out_path=request.out_path)
        except (FileNotFoundError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=_error_payload(exc)) from exc
        return {"path": str(dest)}

    @app.get("/jobs", response_model=list[JobInfo])
    def list_jobs() -> list[JobInfo]:
        return manager.list()

    @app.get("/jobs/{job_id}", response_model=JobInfo)
    def get_job(job_id: str) -> JobInfo:
        try:
            return manager.get(job_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail={"error": "KeyError", "message": f"no job {job_id}"}) from exc

    @app.get("/jobs/{job_id}/metrics")
    def get_metrics(job_id: str) -> list[dict[str, float]]:
        try:
            job = manager.get(job_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail={"error": "KeyError", "message": f"no job {job_id}"}) from exc
        if job.status != "succeeded" or not job.result or "outdir" not in job.result:
            raise HTTPException(
                status_code=409,
                detail={"error": "RuntimeError", "message": f"job {job_id} has no metrics (status {job.status})"},
            )
        path = Path(job.result["outdir"]) / "metrics.csv"
        if not path.exists():
            raise HTTPException(
                status_code=404, detail={"error": "FileNotFoundError", "message": f"{path} missing"}
            )
        return [
            {"episode": row.episode, "e_n": row.e_n, "reward": row.reward}
            for row in _read_metrics(path)
        ]

    return app


app = create_app()
