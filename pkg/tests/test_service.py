import base64
import json

import pytest
from fastapi.testclient import TestClient

from conftest import build_shapefile
from spillnet.service import app

client = TestClient(app, raise_server_exceptions=False)

SQUARE = [[-88.1, 28.5], [-88.0, 28.5], [-88.0, 28.6], [-88.1, 28.6]]


def scenario_body(kind=2, seed=3, duration_h=66):
    resp = client.post("/scenario", json={"kind": kind, "seed": seed,
                                          "duration_h": duration_h})
    assert resp.status_code == 200
    return resp.json()


def small_dataset(kind=2, seed=3):
    body = scenario_body(kind, seed)
    resp = client.post("/features", json={
        "series": [{"spill": body["spill"], "env": body["env"]}],
        "scale": "short",
    })
    assert resp.status_code == 200
    return resp.json()["dataset"]


class TestHealth:
    def test_health(self):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"


class TestScenario:
    def test_scenario_roundtrip(self):
        body = scenario_body()
        assert body["spill"]["spill_id"].startswith("scenario-2")
        assert len(body["spill"]["observations"]) == 67
        assert len(body["env"]) == 67

    def test_bad_kind_rejected(self):
        resp = client.post("/scenario", json={"kind": 9, "seed": 0})
        assert resp.status_code == 422  # pydantic range validation


class TestIngest:
    def test_spill_passthrough(self):
        doc = {"spill_id": "x", "observations": [
            {"timestamp_utc": "2010-04-24T00:00:00Z", "exterior": SQUARE}]}
        resp = client.post("/ingest", json={"spill": doc})
        assert resp.status_code == 200
        assert resp.json()["spill"]["spill_id"] == "x"

    def test_shapefile_upload(self):
        blob = build_shapefile([[[tuple(p) for p in SQUARE]]])
        resp = client.post("/ingest", json={
            "shapefiles_b64": {"a.shp": base64.b64encode(blob).decode()},
            "manifest": {"a.shp": "2010-04-24T00:00:00Z"},
            "spill_id": "shp",
        })
        assert resp.status_code == 200
        obs = resp.json()["spill"]["observations"]
        assert len(obs) == 1

    def test_error_envelope_on_bad_spill(self):
        doc = {"spill_id": "x", "observations": [
            {"timestamp_utc": "2010-04-24T00:00:00Z",
             "exterior": [[0, 95.0], [1, 95.0], [1, 96.0]]}]}
        resp = client.post("/ingest", json={"spill": doc})
        assert resp.status_code == 400
        err = resp.json()["error"]
        assert err["type"] == "GeometryError"
        assert "message" in err


class TestPipelineEndpoints:
    def test_features_train_predict_evaluate(self):
        body = scenario_body()
        dataset = small_dataset()
        assert dataset["schema_version"] == 1
        assert len(dataset["sequences"]) > 5

        train_resp = client.post("/train", json={
            "dataset": dataset,
            "config": {"solver": "euler", "max_epochs": 2, "seed": 1,
                       "hidden": 8, "heads": 2, "batch_size": 8},
        })
        assert train_resp.status_code == 200, train_resp.text
        checkpoint = train_resp.json()["checkpoint"]
        assert train_resp.json()["history"][0]["epoch"] == 0

        pred_resp = client.post("/predict", json={
            "checkpoint": checkpoint, "dataset": dataset, "indices": [0, 1]})
        assert pred_resp.status_code == 200
        predictions = pred_resp.json()["predictions"]
        assert len(predictions["predictions"]) == 2

        eval_resp = client.post("/evaluate", json={
            "predictions": predictions, "truth_spill": body["spill"],
            "cells_per_axis": 128})
        assert eval_resp.status_code == 200
        summary = eval_resp.json()["summary"]
        assert "report" in summary and "area_error_ci95" in summary
        assert eval_resp.json()["report_csv"].startswith("target_ts")

    def test_unknown_solver_rejected(self):
        dataset = small_dataset()
        resp = client.post("/train", json={
            "dataset": dataset, "config": {"solver": "adams"}})
        assert resp.status_code == 400
        assert resp.json()["error"]["type"] == "ConfigError"


class TestSimulateEndpoint:
    def test_simulate_returns_log_and_metrics(self):
        resp = client.post("/simulate", json={
            "scenario_kind": 2, "scenario_seed": 7, "fleet_size": 3,
            "duration_h": 1.0, "tick_seconds": 30.0, "vehicle_speed_kmh": 40.0,
            "seed": 5})
        assert resp.status_code == 200
        body = resp.json()
        assert body["metrics"]["ticks"] == 120
        lines = body["events_jsonl"].strip().splitlines()
        assert all(json.loads(line) for line in lines)
        assert json.loads(body["trajectories_geojson"])["type"] == "FeatureCollection"

    def test_config_error_envelope(self):
        resp = client.post("/simulate", json={"p_loss": 1.0})
        assert resp.status_code == 400
        assert resp.json()["error"]["type"] == "ConfigError"
