"""FastAPI service exposing the full forecasting and simulation pipeline.

Errors raised by the core package surface as a machine-readable envelope:
HTTP 400 for input problems, 500 for numerical failures.
"""

from __future__ import annotations

import base64
import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, features, ingest, pipeline, sim, train as train_mod
from ..errors import NumericalError, SpillnetError
from . import schemas

app = FastAPI(title="spillnet", version=__version__)


@app.exception_handler(SpillnetError)
async def spillnet_error_handler(request: Request, exc: SpillnetError):
    status = 500 if isinstance(exc, NumericalError) else 400
    return JSONResponse(
        status_code=status,
        content={"error": {"type": type(exc).__name__, "message": str(exc)}},
    )


@app.get("/health", response_model=schemas.HealthResponse)
def health():
    return {"status": "ok", "version": __version__}


@app.post("/scenario", response_model=schemas.ScenarioResponse)
def scenario(req: schemas.ScenarioRequest):
    kwargs = {}
    if req.start_utc:
        kwargs["start_utc"] = req.start_utc
    spill_text, env_text = pipeline.scenario_documents(
        req.kind, req.seed, req.duration_h, req.step_h,
        base_area_km2=req.base_area_km2, half_life_h=req.half_life_h,
        spill_id=req.spill_id, **kwargs)
    return {"spill": json.loads(spill_text), "env": json.loads(env_text)}


@app.post("/ingest", response_model=schemas.IngestResponse)
def ingest_endpoint(req: schemas.IngestRequest):
    if req.spill is not None:
        observations = ingest.parse_spill_json(json.dumps(req.spill))
        return {"spill": json.loads(ingest.spill_to_json(observations))}
    if req.shapefiles_b64 is None or req.manifest is None:
        raise SpillnetError("provide either spill JSON or shapefiles + manifest")
    blobs = {name: base64.b64decode(blob) for name, blob in req.shapefiles_b64.items()}
    observations = ingest.ingest_shapefile_series(blobs, req.manifest, req.spill_id)
    return {"spill": json.loads(ingest.spill_to_json(observations, req.spill_id))}


@app.post("/features", response_model=schemas.FeaturesResponse)
def features_endpoint(req: schemas.FeaturesRequest):
    pairs = []
    for entry in req.series:
        observations = ingest.parse_spill_json(json.dumps(entry.spill))
        env = features.env_samples_from_json(json.dumps(entry.env))
        pairs.append((observations, env))
    return {"dataset": pipeline.build_dataset(pairs, req.scale)}


def _train_config(settings: schemas.TrainSettings) -> train_mod.TrainConfig:
    kwargs = {"solver": pipeline.solver_from_name(settings.solver), "seed": settings.seed}
    for name in ("alpha", "beta", "lr", "max_epochs", "patience", "batch_size",
                 "hidden", "heads"):
        value = getattr(settings, name)
        if value is not None:
            kwargs[name] = value
    return train_mod.TrainConfig(**kwargs)


@app.post("/train", response_model=schemas.TrainResponse)
def train_endpoint(req: schemas.TrainRequest):
    checkpoint, history, result = pipeline.train_from_dataset(
        req.dataset, _train_config(req.config))
    return {
        "checkpoint": checkpoint,
        "history": history,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
    }


@app.post("/predict", response_model=schemas.PredictResponse)
def predict_endpoint(req: schemas.PredictRequest):
    predictions = pipeline.predict_windows(req.checkpoint, req.dataset, req.indices)
    return {"predictions": predictions}


@app.post("/evaluate", response_model=schemas.EvaluateResponse)
def evaluate_endpoint(req: schemas.EvaluateRequest):
    summary, csv_text, geojson = pipeline.evaluate_predictions(
        req.predictions, json.dumps(req.truth_spill), baseline_doc=req.baseline,
        seed=req.seed, cells_per_axis=req.cells_per_axis)
    return {"summary": summary, "report_csv": csv_text, "boundaries_geojson": geojson}


@app.post("/compare-solvers", response_model=schemas.CompareResponse)
def compare_endpoint(req: schemas.CompareRequest):
    comparison = pipeline.compare_solvers(
        req.dataset, seed=req.seed, max_epochs=req.max_epochs,
        hidden=req.hidden, patience=req.patience)
    return {"comparison": comparison, "table": pipeline.compare_table_text(comparison)}


@app.post("/simulate", response_model=schemas.SimulateResponse)
def simulate_endpoint(req: schemas.SimulateRequest):
    config = sim.SimConfig(
        scenario_kind=req.scenario_kind, scenario_seed=req.scenario_seed,
        fleet_size=req.fleet_size, vehicle_speed_kmh=req.vehicle_speed_kmh,
        max_turn_rad=req.max_turn_rad, tick_seconds=req.tick_seconds,
        p_loss=req.p_loss, delay_ticks=req.delay_ticks,
        replan_interval_h=req.replan_interval_h, duration_h=req.duration_h,
        sensing_radius_km=req.sensing_radius_km,
        watchdog_timeout_ticks=req.watchdog_timeout_ticks,
        heartbeat_ticks=req.heartbeat_ticks,
        fault_schedule=tuple((int(t), str(v)) for t, v in req.fault_schedule),
        predictor=req.predictor, checkpoint_path=req.checkpoint_path,
        normalizer_path=req.normalizer_path, seed=req.seed)
    simulation = sim.Simulation(config)
    log, metrics = simulation.run()
    return {
        "metrics": metrics.to_dict(),
        "events_jsonl": log.to_jsonl(),
        "trajectories_geojson": simulation.trajectories_geojson(),
    }
