"""HTTP endpoints: success paths, the error-category to status mapping, and
manifest contents."""

import json

import pytest
from fastapi.testclient import TestClient

from qdpm.service import app

client = TestClient(app)


def post(endpoint, out_dir, config=None, seed=None):
    payload = {"config": config or {}, "out_dir": str(out_dir), "seed": seed}
    return client.post(f"/{endpoint}", json=payload)


def test_health():
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_solve_writes_artifacts_and_certificate(tmp_path):
    resp = post("solve", tmp_path, seed=1)
    assert resp.status_code == 200
    manifest = resp.json()["manifest"]
    assert manifest["command"] == "solve"
    assert manifest["solver"]["converged"] is True
    assert manifest["solver"]["residual"] <= 1e-9
    assert manifest["qtable"]["n_states"] == 45
    for name in ("policy.csv", "values.csv", "manifest.json"):
        assert (tmp_path / name).exists()
    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk == manifest


def test_run_returns_summary(tmp_path):
    resp = post("run", tmp_path, config={"experiment": {"horizon": 500}}, seed=2)
    assert resp.status_code == 200
    manifest = resp.json()["manifest"]
    assert manifest["seed"] == 2
    assert manifest["summary"]["horizon"] == 500
    assert (tmp_path / "trajectory.csv").exists()


def test_invalid_config_maps_to_400(tmp_path):
    resp = post("run", tmp_path, config={"experiment": {"horizon": -1}})
    assert resp.status_code == 400
    detail = resp.json()["detail"]
    assert detail["category"] == "config"
    assert "experiment.horizon" in detail["message"]


def test_malformed_request_maps_to_422(tmp_path):
    resp = client.post("/run", json={"out_dir": str(tmp_path)})
    assert resp.status_code == 422


def test_solver_nonconvergence_maps_to_409(tmp_path):
    resp = post("solve", tmp_path, config={"experiment": {"solver_max_iter": 2}}, seed=1)
    assert resp.status_code == 409
    detail = resp.json()["detail"]
    assert detail["category"] == "solver_nonconvergence"
    assert detail["manifest"]["solver"]["converged"] is False
    # The manifest is still written so the failed run stays auditable.
    assert (tmp_path / "manifest.json").exists()


def test_missing_policy_artifact_maps_to_424(tmp_path):
    config = {"agent": {"kind": "oracle", "policy_path": str(tmp_path / "nope.csv")},
              "experiment": {"horizon": 10}}
    resp = post("run", tmp_path, config=config)
    assert resp.status_code == 424
    detail = resp.json()["detail"]
    assert detail["category"] == "missing_artifact"
    assert "solve" in detail["message"]


def test_compare_rejects_schedule(tmp_path):
    config = {"workload": {"kind": "regime_schedule", "segments": [
        {"duration": 10, "workload": {"kind": "bernoulli", "p": 0.3}}]}}
    resp = post("compare", tmp_path, config=config)
    assert resp.status_code == 400


def test_track_rejects_stationary_workload(tmp_path):
    resp = post("track", tmp_path, config={"experiment": {"horizon": 10}})
    assert resp.status_code == 400


def test_sweep_requires_grid(tmp_path):
    resp = post("sweep", tmp_path, config={})
    assert resp.status_code == 400


@pytest.mark.parametrize("endpoint", ["solve", "run", "compare", "track", "sweep"])
def test_all_endpoints_exist(endpoint, tmp_path):
    resp = post(endpoint, tmp_path, config={"bogus_key": 1})
    assert resp.status_code == 400
