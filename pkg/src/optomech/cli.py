"""Command-line client for the experiment service.

Every command talks HTTP to a service instance. With --server the
client targets a running instance; without it a private in-process
server is spawned on an ephemeral port for the duration of the command,
so each subcommand also works standalone. Success prints the result
JSON on stdout and exits 0; failure prints an error JSON on stderr and
exits nonzero.
"""

from __future__ import annotations

import json
import sys
import threading
import time

import click
import httpx
import uvicorn
import yaml

from .config import parse_scalar
from .service import create_app

POLL_SECONDS = 0.25


class LocalServer:
    """In-process uvicorn on an ephemeral loopback port."""

    def __init__(self):
        config = uvicorn.Config(create_app(), host="127.0.0.1", port=0, log_level="warning")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def __enter__(self) -> str:
        self._thread.start()
        while not self._server.started:
            if not self._thread.is_alive():
                raise RuntimeError("local service failed to start")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def __exit__(self, *exc_info) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)


def _fail(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True), err=True)
    sys.exit(1)


def _check(response: httpx.Response) -> dict:
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", {})
        except ValueError:
            detail = {"error": "HTTPError", "message": response.text}
        if not isinstance(detail, dict):
            detail = {"error": "HTTPError", "message": str(detail)}
        _fail({"status_code": response.status_code, **detail})
    return response.json()


def _submit_and_wait(server: str, path: str, payload: dict) -> dict:
    with httpx.Client(base_url=server, timeout=60.0) as client:
        job = _check(client.post(path, json=payload))
        while job["status"] not in ("succeeded", "failed"):
            time.sleep(POLL_SECONDS)
            job = _check(client.get(f"/jobs/{job['id']}"))
    if job["status"] == "failed":
        _fail({"job_id": job["id"], **(job.get("error") or {})})
    result = dict(job.get("result") or {})
    result["job_id"] = job["id"]
    return result


def _run_job(server: str | None, path: str, payload: dict) -> None:
    if server is not None:
        result = _submit_and_wait(server, path, payload)
    else:
        with LocalServer() as url:
            result = _submit_and_wait(url, path, payload)
    click.echo(json.dumps(result, indent=2, sort_keys=True))


def _load_yaml(path: str) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        _fail({"error": "ValueError", "message": f"config file {path} must hold a mapping"})
    return data


def _payload(config_path, overrides, seed, outdir) -> dict:
    overrides = list(overrides)
    if seed is not None:
        overrides.append(f"seed={seed}")
    return {"config": _load_yaml(config_path), "overrides": overrides, "outdir": outdir}


def run_options(fn):
    fn = click.option("--server", default=None, metavar="URL", help="Service URL; omit to run in-process.")(fn)
    fn = click.option("--outdir", default=None, type=click.Path(), help="Run directory override.")(fn)
    fn = click.option("--seed", default=None, type=int, help="Master seed override.")(fn)
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Dotted-key config override; repeatable.")(fn)
    fn = click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False), help="YAML experiment config.")(fn)
    return fn


@click.group()
@click.version_option(package_name="optomech")
def main() -> None:
    """Measurement-feedback entanglement control workbench."""


@main.command()
@run_options
def train(config_path, overrides, seed, outdir, server) -> None:
    """Train the configured agent (fixed controllers just evaluate)."""
    _run_job(server, "/jobs/train", _payload(config_path, overrides, seed, outdir))


@main.command()
@run_options
@click.option("--checkpoint", default=None, type=click.Path(exists=True, dir_okay=False), help="Trained agent checkpoint (.npz).")
def eval(config_path, overrides, seed, outdir, server, checkpoint) -> None:
    """Evaluate a frozen policy over the configured episode budget."""
    payload = _payload(config_path, overrides, seed, outdir)
    payload["checkpoint"] = checkpoint
    _run_job(server, "/jobs/eval", payload)


@main.command()
@run_options
def baseline(config_path, overrides, seed, outdir, server) -> None:
    """Run a bayesian or random reference controller."""
    _run_job(server, "/jobs/baseline", _payload(config_path, overrides, seed, outdir))


@main.command()
@run_options
@click.option("--axis", required=True, help="Swept key: kappa, eta, T, mixed_p, or any dotted config key.")
@click.option("--values", required=True, help="Comma-separated values for the swept key.")
@click.option("--checkpoint", default=None, type=click.Path(exists=True, dir_okay=False), help="Checkpoint when sweeping a trained agent.")
def sweep(config_path, overrides, seed, outdir, server, axis, values, checkpoint) -> None:
    """Evaluate the config across a grid of one parameter."""
    payload = _payload(config_path, overrides, seed, outdir)
    payload["axis"] = axis
    payload["values"] = [parse_scalar(v) for v in values.split(",")]
    payload["checkpoint"] = checkpoint
    _run_job(server, "/jobs/sweep", payload)


@main.command("two-phase")
@run_options
def two_phase(config_path, overrides, seed, outdir, server) -> None:
    """Nonlinear pipeline: entanglement phase, then target tracking."""
    _run_job(server, "/jobs/two-phase", _payload(config_path, overrides, seed, outdir))


@main.command()
@click.option("--run-dir", required=True, type=click.Path(exists=True, file_okay=False), help="Run directory to export from.")
@click.option("--kind", required=True, help="episodes, steps, populations, target, or sweep.")
@click.option("--out", "out_path", default=None, type=click.Path(), help="Destination file.")
@click.option("--server", default=None, metavar="URL", help="Service URL; omit to run in-process.")
def export(run_dir, kind, out_path, server) -> None:
    """Write tidy plot-ready tables from a finished run."""
    payload = {"run_dir": run_dir, "kind": kind, "out_path": out_path}

    def call(url: str) -> None:
        with httpx.Client(base_url=url, timeout=60.0) as client:
            click.echo(json.dumps(_check(client.post("/export", json=payload)), indent=2))

    if server is not None:
        call(server)
    else:
        with LocalServer() as url:
            call(url)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--workers", default=2, show_default=True, type=int, help="Concurrent jobs.")
def serve(host, port, workers) -> None:
    """Run the experiment service in the foreground."""
    uvicorn.run(create_app(max_workers=workers), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
