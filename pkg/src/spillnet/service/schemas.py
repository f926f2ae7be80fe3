"""Pydantic request/response models for the forecasting service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class ErrorBody(BaseModel):
    type: str
    message: str


class ErrorEnvelope(BaseModel):
    error: ErrorBody


class ScenarioRequest(BaseModel):
    kind: int = Field(ge=1, le=5)
    seed: int = 0
    duration_h: int = 72
    step_h: int = 1
    start_utc: Optional[str] = None
    base_area_km2: Optional[float] = None
    half_life_h: float = 240.0
    spill_id: Optional[str] = None


class ScenarioResponse(BaseModel):
    spill: dict
    env: list


class IngestRequest(BaseModel):
    # either canonical spill JSON passthrough...
    spill: Optional[dict] = None
    # ...or base64-encoded .shp blobs with a name -> ISO-8601 manifest
    shapefiles_b64: Optional[dict] = None
    manifest: Optional[dict] = None
    spill_id: str = "spill"


class IngestResponse(BaseModel):
    spill: dict


class SeriesEntry(BaseModel):
    spill: dict
    env: list


class FeaturesRequest(BaseModel):
    series: list[SeriesEntry]
    scale: str = "short"


class FeaturesResponse(BaseModel):
    dataset: dict


class TrainSettings(BaseModel):
    solver: str = "rk4"
    alpha: Optional[float] = None
    beta: Optional[float] = None
    lr: Optional[float] = None
    max_epochs: Optional[int] = None
    patience: Optional[int] = None
    batch_size: Optional[int] = None
    seed: int = 0
    hidden: Optional[int] = None
    heads: Optional[int] = None


class TrainRequest(BaseModel):
    dataset: dict
    config: TrainSettings = TrainSettings()


class TrainResponse(BaseModel):
    checkpoint: dict
    history: list
    best_epoch: int
    best_val_loss: float


class PredictRequest(BaseModel):
    checkpoint: dict
    dataset: dict
    indices: Optional[list[int]] = None


class PredictResponse(BaseModel):
    predictions: dict
    boundaries_geojson: Optional[str] = None


class EvaluateRequest(BaseModel):
    predictions: dict
    truth_spill: dict
    baseline: Optional[dict] = None
    seed: int = 0
    cells_per_axis: int = 256


class EvaluateResponse(BaseModel):
    summary: dict
    report_csv: str
    boundaries_geojson: str


class CompareRequest(BaseModel):
    dataset: dict
    seed: int = 0
    max_epochs: Optional[int] = None
    hidden: Optional[int] = None
    patience: Optional[int] = None


class CompareResponse(BaseModel):
    comparison: dict
    table: str


class SimulateRequest(BaseModel):
    scenario_kind: int = 2
    scenario_seed: int = 7
    fleet_size: int = 4
    vehicle_speed_kmh: float = 24.0
    max_turn_rad: float = 0.5
    tick_seconds: float = 10.0
    p_loss: float = 0.0
    delay_ticks: int = 0
    replan_interval_h: float = 3.0
    duration_h: float = 6.0
    sensing_radius_km: float = 0.5
    watchdog_timeout_ticks: int = 360
    heartbeat_ticks: int = 30
    fault_schedule: list = []
    predictor: str = "oracle"
    checkpoint_path: Optional[str] = None
    normalizer_path: Optional[str] = None
    seed: int = 0


class SimulateResponse(BaseModel):
    metrics: dict
    events_jsonl: str
    trajectories_geojson: str
