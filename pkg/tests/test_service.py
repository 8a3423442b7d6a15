"""Tests for the HTTP service: endpoints, chained workflows, error mapping."""

import csv
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from nmsparse.checkpoint import load_checkpoint, save_checkpoint
from nmsparse.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def _train_payload(tmp_path, **overrides):
    payload = {
        "pattern": {"n": 1, "m": 4},
        "mask_mode": "nm",
        "epochs": 1,
        "batch_size": 32,
        "seed": 0,
        "dtype": "f64",
        "model": {"widths": [4, 8], "classes": 4},
        "dataset": {
            "classes": 4,
            "samples_per_class": 10,
            "image_size": 8,
            "noise": 0.2,
            "jitter": 1.0,
        },
        "checkpoint_out": str(tmp_path / "model.spre"),
    }
    payload.update(overrides)
    return payload


class TestHealth:
    def test_health_reports_ok(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"
        assert body["service"] == "nmsparse"


class TestTrainEndpoint:
    def test_train_writes_requested_artifacts(self, client, tmp_path):
        payload = _train_payload(
            tmp_path,
            metrics_out=str(tmp_path / "metrics.jsonl"),
            profiles_out=str(tmp_path / "profiles.csv"),
        )
        r = client.post("/train", json=payload)
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["epochs_run"] == 1
        assert 0.0 <= body["final_val_acc"] <= 1.0
        assert (tmp_path / "model.spre").exists()

        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert set(record) == {"epoch", "loss", "train_acc", "val_acc"}

        with open(tmp_path / "profiles.csv", newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["layer", "u", "v", "spatial_sparsity"]
        assert len(rows) == 1 + 2 * 9  # two stage convs, 3x3 kernels
        assert all(float(row[3]) == 0.75 for row in rows[1:])

    def test_unknown_config_key_is_a_validation_error(self, client, tmp_path):
        payload = _train_payload(tmp_path, pruning_rate=0.5)
        assert client.post("/train", json=payload).status_code == 422

    def test_out_of_range_value_is_a_validation_error(self, client, tmp_path):
        payload = _train_payload(tmp_path, momentum=1.0)
        assert client.post("/train", json=payload).status_code == 422

    def test_core_config_errors_map_to_400(self, client, tmp_path):
        payload = _train_payload(tmp_path, model={"widths": [4, 8], "classes": 7})
        r = client.post("/train", json=payload)
        assert r.status_code == 400
        body = r.json()
        assert body["kind"] == "ConfigError"
        assert "classes" in body["error"]


@pytest.fixture(scope="module")
def two_branch(client, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("chain")
    r = client.post("/train", json=_train_payload(tmp))
    assert r.status_code == 200, r.text
    return tmp / "model.spre"


@pytest.fixture(scope="module")
def dense(client, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("dense")
    payload = _train_payload(tmp, mask_mode="dense", checkpoint_out=str(tmp / "dense.spre"))
    r = client.post("/train", json=payload)
    assert r.status_code == 200, r.text
    return tmp / "dense.spre"


class TestChainedWorkflow:
    def test_reparam_then_verify_passes(self, client, two_branch, tmp_path):
        merged = tmp_path / "merged.spre"
        r = client.post("/reparam", json={"checkpoint": str(two_branch), "out": str(merged)})
        assert r.status_code == 200, r.text
        assert r.json()["layers"] == ["s0b0", "s1b0"]

        r = client.post(
            "/verify",
            json={
                "checkpoint_two_branch": str(two_branch),
                "checkpoint_merged": str(merged),
                "trials": 5,
            },
        )
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["passed"] is True
        assert body["max_abs_diff"] <= 1e-10
        assert set(body["layers"]) == {"s0b0", "s1b0"}
        for layer in body["layers"].values():
            assert layer["passed"] is True
            assert layer["trials"] == 5

    def test_verify_flags_a_corrupted_merge(self, client, two_branch, tmp_path):
        merged = tmp_path / "merged.spre"
        client.post("/reparam", json={"checkpoint": str(two_branch), "out": str(merged)})
        entries = load_checkpoint(merged)
        entries["s1b0.bias_bar"] = entries["s1b0.bias_bar"] + 0.25
        save_checkpoint(merged, entries)

        r = client.post(
            "/verify",
            json={
                "checkpoint_two_branch": str(two_branch),
                "checkpoint_merged": str(merged),
                "trials": 3,
            },
        )
        assert r.status_code == 200
        body = r.json()
        assert body["passed"] is False
        assert body["max_abs_diff"] > 1e-10
        assert body["layers"]["s0b0"]["passed"] is True
        assert body["layers"]["s1b0"]["passed"] is False

    def test_spre_build_needs_dense_stage_convs(self, client, two_branch, tmp_path):
        r = client.post(
            "/spre-build",
            json={
                "checkpoint": str(two_branch),
                "n": 1,
                "m": 4,
                "out": str(tmp_path / "x.spre"),
            },
        )
        assert r.status_code == 400
        assert r.json()["kind"] == "ConfigError"


class TestDenseCheckpointTools:
    def test_project_attaches_masks_to_divisible_convs(self, client, dense, tmp_path):
        out = tmp_path / "projected.spre"
        r = client.post(
            "/project", json={"checkpoint": str(dense), "n": 1, "m": 4, "out": str(out)}
        )
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["layers"] == ["s0b0", "s1b0"]  # the 3-channel stem is skipped
        assert body["pattern"] == "1:4"
        entries = load_checkpoint(out)
        assert entries["s0b0.mask"].dtype == np.uint8
        assert entries["s0b0.mask"].shape == entries["s0b0.w"].shape

    def test_profile_reads_the_masks_back(self, client, dense, tmp_path):
        projected = tmp_path / "projected.spre"
        client.post(
            "/project", json={"checkpoint": str(dense), "n": 1, "m": 4, "out": str(projected)}
        )
        out = tmp_path / "profile.csv"
        r = client.post("/profile", json={"checkpoint": str(projected), "out": str(out)})
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["layers"] == ["s0b0.mask", "s1b0.mask"]
        assert body["rows"] == 18
        with open(out, newline="") as f:
            rows = list(csv.reader(f))
        assert len(rows) == 19
        assert {row[0] for row in rows[1:]} == {"s0b0.mask", "s1b0.mask"}

    def test_spre_build_wraps_dense_checkpoint(self, client, dense, tmp_path):
        out = tmp_path / "wrapped.spre"
        r = client.post(
            "/spre-build",
            json={"checkpoint": str(dense), "n": 1, "m": 4, "variant": "same", "out": str(out)},
        )
        assert r.status_code == 200, r.text
        body = r.json()
        assert body["layers"] == ["s0b0", "s1b0"]
        assert body["variant"] == "same"
        entries = load_checkpoint(out)
        assert "s0b0.w_main" in entries
        assert np.array_equal(entries["s0b0.b_extra"], entries["s0b0.b_main"])

    def test_verify_rejects_checkpoints_without_two_branch_layers(self, client, dense, tmp_path):
        r = client.post(
            "/verify",
            json={"checkpoint_two_branch": str(dense), "checkpoint_merged": str(dense)},
        )
        assert r.status_code == 400
        assert r.json()["kind"] == "ConfigError"


class TestErrorMapping:
    def test_missing_checkpoint_maps_to_404(self, client, tmp_path):
        r = client.post(
            "/profile",
            json={"checkpoint": str(tmp_path / "nope.spre"), "out": str(tmp_path / "o.csv")},
        )
        assert r.status_code == 404
        body = r.json()
        assert body["kind"] == "FileNotFoundError"
        assert "error" in body
