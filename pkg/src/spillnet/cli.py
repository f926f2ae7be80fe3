"""Command-line frontend: a thin client for the HTTP service.

Without --server the client dispatches requests to an in-process instance of
the service (same request/response models, no daemon needed); with --server it
targets a running instance. `spillnet serve` starts one.

Exit codes: 1 usage, 2 input error, 3 numerical failure. Errors are emitted
as machine-readable JSON on stderr.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import time
from base64 import b64encode
from pathlib import Path

import click

from . import __version__

EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("spillnet.cli")


class ServiceFailure(Exception):
    def __init__(self, status: int, err_type: str, message: str):
        super().__init__(f"{err_type}: {message}")
        self.status = status
        self.err_type = err_type
        self.message = message

    @property
    def exit_code(self) -> int:
        if self.err_type == "NumericalError" or self.status >= 500:
            return EXIT_NUMERICAL
        return EXIT_INPUT


class ServiceClient:
    """HTTP client talking either to a remote server or in-process."""

    def __init__(self, server: str = None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=3600.0)
        else:
            from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app, raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code >= 400:
            try:
                err = resp.json().get("error", {})
            except ValueError:
                err = {}
            raise ServiceFailure(resp.status_code, err.get("type", "HTTPError"),
                                 err.get("message", resp.text[:500]))
        return resp.json()


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ServiceFailure(400, "InputError", f"no such file: {path}")
    except json.JSONDecodeError as exc:
        raise ServiceFailure(400, "InputError", f"{path}: invalid JSON: {exc}")


def _write(outdir: Path, name: str, text: str) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / name
    path.write_text(text)
    return path


def _write_manifest(ctx, outdir: Path, command: str, resolved: dict,
                    inputs, outputs, started: float):
    manifest = {
        "command": command,
        "resolved_config": resolved,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": resolved.get("seed"),
        "artifact_version": __version__,
        "wall_clock_s": round(time.monotonic() - started, 3),
    }
    _write(outdir, f"manifest-{command}.json", json.dumps(manifest, indent=2))


def _merged(ctx, command: str, **flags) -> dict:
    """Apply precedence defaults < config file < explicit flags."""
    file_conf = ctx.obj.get("config_file") or {}
    section = file_conf.get(command, file_conf)
    resolved = {}
    for name, value in flags.items():
        source = ctx.get_parameter_source(name)
        if (source is not None and source.name == "DEFAULT"
                and name in section):
            resolved[name] = section[name]
        else:
            resolved[name] = value
    return resolved


@click.group()
@click.option("--server", default=None, help="Remote service URL (default: in-process).")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file; flags override file values.")
@click.option("--out", "outdir", type=click.Path(), default="out",
              help="Output directory.")
@click.version_option(__version__)
@click.pass_context
def cli(ctx, server, config_path, outdir):
    level = os.environ.get("SPILLNET_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR))
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["outdir"] = Path(outdir)
    ctx.obj["config_file"] = _load_json(config_path) if config_path else {}


def _client(ctx) -> ServiceClient:
    return ServiceClient(ctx.obj.get("server"))


@cli.command()
@click.option("--kind", type=int, default=None,
              help="Scenario family 1..5 (flag or config file).")
@click.option("--seed", type=int, default=0)
@click.option("--duration-h", "duration_h", type=int, default=72)
@click.option("--step-h", "step_h", type=int, default=1)
@click.option("--base-area-km2", "base_area_km2", type=float, default=None)
@click.option("--half-life-h", "half_life_h", type=float, default=240.0)
@click.pass_context
def scenario(ctx, **flags):
    """Generate synthetic ground truth (spill + forcing JSON)."""
    started = time.monotonic()
    resolved = _merged(ctx, "scenario", **flags)
    if resolved.get("kind") is None:
        raise click.UsageError("Missing option '--kind'.")
    body = _client(ctx).post("/scenario", resolved)
    outdir = ctx.obj["outdir"]
    outputs = [
        _write(outdir, "spill.json", json.dumps(body["spill"], indent=2)),
        _write(outdir, "env.json", json.dumps(body["env"], indent=2)),
    ]
    _write_manifest(ctx, outdir, "scenario", resolved, [], outputs, started)
    click.echo(str(outputs[0]))


@cli.command()
@click.option("--shp", "shp_paths", type=click.Path(), multiple=True,
              help=".shp files (needs --manifest).")
@click.option("--manifest", "manifest_path", type=click.Path(), default=None,
              help='JSON {"<filename>": "<ISO-8601 timestamp>"}.')
@click.option("--spill", "spill_path", type=click.Path(), default=None,
              help="Canonical spill JSON to validate/normalize.")
@click.option("--spill-id", default="spill")
@click.pass_context
def ingest(ctx, shp_paths, manifest_path, spill_path, spill_id):
    """Parse shapefiles or spill JSON into the canonical document."""
    started = time.monotonic()
    if spill_path:
        payload = {"spill": _load_json(spill_path)}
        inputs = [spill_path]
    elif shp_paths and manifest_path:
        blobs = {}
        for p in shp_paths:
            try:
                blobs[Path(p).name] = b64encode(Path(p).read_bytes()).decode()
            except FileNotFoundError:
                raise ServiceFailure(400, "InputError", f"no such file: {p}")
        payload = {"shapefiles_b64": blobs, "manifest": _load_json(manifest_path),
                   "spill_id": spill_id}
        inputs = list(shp_paths) + [manifest_path]
    else:
        raise click.UsageError("provide --spill or (--shp ... --manifest)")
    body = _client(ctx).post("/ingest", payload)
    outdir = ctx.obj["outdir"]
    out = _write(outdir, "spill.json", json.dumps(body["spill"], indent=2))
    _write_manifest(ctx, outdir, "ingest", {"spill_id": spill_id}, inputs,
                    [out], started)
    click.echo(str(out))


@cli.command()
@click.option("--spill", "spill_paths", type=click.Path(), multiple=True, required=True)
@click.option("--env", "env_paths", type=click.Path(), multiple=True, required=True)
@click.option("--scale", type=click.Choice(["short", "medium"]), default="short")
@click.pass_context
def features(ctx, spill_paths, env_paths, scale):
    """Build a normalized sequence dataset from spill + forcing series."""
    started = time.monotonic()
    if len(spill_paths) != len(env_paths):
        raise click.UsageError("--spill and --env must pair up")
    series = [{"spill": _load_json(s), "env": _load_json(e)}
              for s, e in zip(spill_paths, env_paths)]
    body = _client(ctx).post("/features", {"series": series, "scale": scale})
    outdir = ctx.obj["outdir"]
    out = _write(outdir, "dataset.json", json.dumps(body["dataset"]))
    _write_manifest(ctx, outdir, "features", {"scale": scale},
                    list(spill_paths) + list(env_paths), [out], started)
    click.echo(str(out))


@cli.command()
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--solver", type=click.Choice(["rk4", "explicit", "euler", "lstm"]),
              default="rk4")
@click.option("--seed", type=int, default=0)
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--max-epochs", "max_epochs", type=int, default=None)
@click.option("--patience", type=int, default=None)
@click.option("--batch-size", "batch_size", type=int, default=None)
@click.option("--hidden", type=int, default=None)
@click.option("--heads", type=int, default=None)
@click.pass_context
def train(ctx, dataset_path, **flags):
    """Train one core on a dataset; writes checkpoint + history CSV."""
    started = time.monotonic()
    resolved = _merged(ctx, "train", **flags)
    body = _client(ctx).post("/train", {
        "dataset": _load_json(dataset_path),
        "config": {k: v for k, v in resolved.items() if v is not None},
    })
    outdir = ctx.obj["outdir"]
    ckpt = _write(outdir, "checkpoint.json", json.dumps(body["checkpoint"]))
    lines = ["epoch,train_loss,val_loss,lr"]
    for r in body["history"]:
        lines.append(f"{r['epoch']},{r['train_loss']:.10g},{r['val_loss']:.10g},{r['lr']:.10g}")
    hist = _write(outdir, "history.csv", "\n".join(lines) + "\n")
    norm = _write(outdir, "normalizer.json",
                  json.dumps(_load_json(dataset_path)["normalizer"]))
    _write_manifest(ctx, outdir, "train", resolved, [dataset_path],
                    [ckpt, hist, norm], started)
    click.echo(f"{ckpt} best_epoch={body['best_epoch']} "
               f"best_val_loss={body['best_val_loss']:.6g}")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", type=click.Path(), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--index", "indices", type=int, multiple=True,
              help="Window indices (default: all).")
@click.pass_context
def predict(ctx, checkpoint_path, dataset_path, indices):
    """Run inference over dataset windows."""
    started = time.monotonic()
    body = _client(ctx).post("/predict", {
        "checkpoint": _load_json(checkpoint_path),
        "dataset": _load_json(dataset_path),
        "indices": list(indices) or None,
    })
    outdir = ctx.obj["outdir"]
    out = _write(outdir, "predictions.json", json.dumps(body["predictions"]))
    _write_manifest(ctx, outdir, "predict", {"indices": list(indices)},
                    [checkpoint_path, dataset_path], [out], started)
    click.echo(str(out))


@cli.command()
@click.option("--predictions", "pred_path", type=click.Path(), required=True)
@click.option("--truth", "truth_path", type=click.Path(), required=True)
@click.option("--baseline", "baseline_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=0)
@click.pass_context
def evaluate(ctx, pred_path, truth_path, baseline_path, seed):
    """Score predictions against observed boundaries."""
    started = time.monotonic()
    payload = {
        "predictions": _load_json(pred_path),
        "truth_spill": _load_json(truth_path),
        "seed": seed,
    }
    if baseline_path:
        payload["baseline"] = _load_json(baseline_path)
    body = _client(ctx).post("/evaluate", payload)
    outdir = ctx.obj["outdir"]
    outputs = [
        _write(outdir, "report.json", json.dumps(body["summary"], indent=2)),
        _write(outdir, "report.csv", body["report_csv"]),
        _write(outdir, "boundaries.geojson", body["boundaries_geojson"]),
    ]
    _write_manifest(ctx, outdir, "evaluate", {"seed": seed},
                    [pred_path, truth_path], outputs, started)
    click.echo(json.dumps(body["summary"]["report"], indent=2))


@cli.command("compare-solvers")
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--max-epochs", "max_epochs", type=int, default=None)
@click.option("--hidden", type=int, default=None)
@click.option("--patience", type=int, default=None)
@click.pass_context
def compare_solvers(ctx, dataset_path, seed, max_epochs, hidden, patience):
    """Train all four cores and emit the comparison table."""
    started = time.monotonic()
    body = _client(ctx).post("/compare-solvers", {
        "dataset": _load_json(dataset_path), "seed": seed,
        "max_epochs": max_epochs, "hidden": hidden, "patience": patience,
    })
    outdir = ctx.obj["outdir"]
    outputs = [
        _write(outdir, "comparison.json", json.dumps(body["comparison"], indent=2)),
        _write(outdir, "comparison.txt", body["table"]),
    ]
    _write_manifest(ctx, outdir, "compare-solvers",
                    {"seed": seed, "max_epochs": max_epochs, "hidden": hidden},
                    [dataset_path], outputs, started)
    click.echo(body["table"])


@cli.command()
@click.option("--scenario-kind", "scenario_kind", type=int, default=2)
@click.option("--scenario-seed", "scenario_seed", type=int, default=7)
@click.option("--fleet-size", "fleet_size", type=int, default=4)
@click.option("--duration-h", "duration_h", type=float, default=6.0)
@click.option("--replan-interval-h", "replan_interval_h", type=float, default=3.0)
@click.option("--p-loss", "p_loss", type=float, default=0.0)
@click.option("--delay-ticks", "delay_ticks", type=int, default=0)
@click.option("--seed", type=int, default=0)
@click.option("--fault", "faults", multiple=True,
              help="tick:vehicle_id dropout, repeatable.")
@click.option("--tcp-listen", "tcp_listen", type=int, default=None,
              help="Accept NDJSON boundary updates on this TCP port "
                   "(runs locally, not via the service).")
@click.pass_context
def simulate(ctx, faults, tcp_listen, **flags):
    """Run the closed-loop containment simulation."""
    started = time.monotonic()
    resolved = _merged(ctx, "simulate", **flags)
    fault_schedule = []
    for f in faults:
        try:
            tick, vid = f.split(":", 1)
            fault_schedule.append((int(tick), vid))
        except ValueError:
            raise click.UsageError(f"bad --fault {f!r}, expected tick:vehicle_id")
    outdir = ctx.obj["outdir"]
    if tcp_listen is not None:
        from . import sim as sim_mod

        config = sim_mod.SimConfig(fault_schedule=tuple(fault_schedule),
                                   tcp_listen=tcp_listen, **resolved)
        log_, metrics = sim_mod.run_simulation(config)
        events, metrics_doc, traj = log_.to_jsonl(), metrics.to_dict(), None
    else:
        body = _client(ctx).post("/simulate",
                                 dict(resolved, fault_schedule=fault_schedule))
        events, metrics_doc = body["events_jsonl"], body["metrics"]
        traj = body["trajectories_geojson"]
    outputs = [
        _write(outdir, "events.jsonl", events),
        _write(outdir, "metrics.json", json.dumps(metrics_doc, indent=2)),
    ]
    if traj:
        outputs.append(_write(outdir, "trajectories.geojson", traj))
    _write_manifest(ctx, outdir, "simulate", resolved, [], outputs, started)
    click.echo(json.dumps(metrics_doc, indent=2))


@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False, obj={})
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        sys.stderr.write(json.dumps(
            {"error": {"type": "UsageError", "message": exc.format_message()}}) + "\n")
        return EXIT_USAGE
    except click.ClickException as exc:
        sys.stderr.write(json.dumps(
            {"error": {"type": type(exc).__name__, "message": exc.format_message()}}) + "\n")
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except ServiceFailure as exc:
        sys.stderr.write(json.dumps(
            {"error": {"type": exc.err_type, "message": exc.message}}) + "\n")
        return exc.exit_code
    except Exception as exc:  # unexpected runtime failure
        sys.stderr.write(json.dumps(
            {"error": {"type": type(exc).__name__, "message": str(exc)}}) + "\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
