"""Tests for the command-line client: pipelines, exit codes, error output."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from nmsparse.checkpoint import load_checkpoint, save_checkpoint
from nmsparse.cli import main

TRAIN_CONFIG = {
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
}


@pytest.fixture
def runner():
    return CliRunner()


def _write_config(tmp_path, **overrides):
    config = dict(TRAIN_CONFIG, checkpoint_out=str(tmp_path / "model.spre"))
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli-train")
    config = _write_config(tmp)
    result = CliRunner().invoke(main, ["train", "--config", str(config)])
    assert result.exit_code == 0, result.output
    return tmp / "model.spre"


class TestHelp:
    def test_lists_every_subcommand(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for command in ["train", "profile", "project", "spre-build", "reparam", "verify", "serve"]:
            assert command in result.output


class TestTrainCommand:
    def test_train_emits_single_line_json(self, runner, tmp_path):
        config = _write_config(tmp_path, metrics_out=str(tmp_path / "m.jsonl"))
        result = runner.invoke(main, ["train", "--config", str(config)])
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert len(lines) == 1
        body = json.loads(lines[0])
        assert body["epochs_run"] == 1
        assert (tmp_path / "model.spre").exists()
        assert (tmp_path / "m.jsonl").exists()

    def test_missing_config_file_fails_cleanly(self, runner, tmp_path):
        result = runner.invoke(main, ["train", "--config", str(tmp_path / "nope.json")])
        assert result.exit_code == 1
        err = json.loads(result.stderr.strip())
        assert err["kind"] == "FileNotFoundError"

    def test_malformed_json_config_fails_cleanly(self, runner, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        result = runner.invoke(main, ["train", "--config", str(bad)])
        assert result.exit_code == 1
        assert json.loads(result.stderr.strip())["kind"] == "JSONDecodeError"

    def test_unknown_config_key_fails_cleanly(self, runner, tmp_path):
        config = _write_config(tmp_path, sparsity_target=0.9)
        result = runner.invoke(main, ["train", "--config", str(config)])
        assert result.exit_code == 1
        assert json.loads(result.stderr.strip())["kind"] == "ValidationError"


class TestPipeline:
    def test_reparam_then_verify_exits_zero(self, runner, trained, tmp_path):
        merged = tmp_path / "merged.spre"
        result = runner.invoke(main, ["reparam", str(trained), "--out", str(merged)])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["layers"] == ["s0b0", "s1b0"]

        result = runner.invoke(
            main, ["verify", str(trained), str(merged), "--trials", "5"]
        )
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert report["passed"] is True
        assert report["max_abs_diff"] <= 1e-10

    def test_verify_exits_one_on_mismatch(self, runner, trained, tmp_path):
        merged = tmp_path / "merged.spre"
        runner.invoke(main, ["reparam", str(trained), "--out", str(merged)])
        entries = load_checkpoint(merged)
        entries["s0b0.bias_bar"] = entries["s0b0.bias_bar"] + 1.0
        save_checkpoint(merged, entries)

        result = runner.invoke(main, ["verify", str(trained), str(merged), "--trials", "3"])
        assert result.exit_code == 1
        report = json.loads(result.output)
        assert report["passed"] is False

    def test_project_then_profile_round_trip(self, runner, trained, tmp_path):
        projected = tmp_path / "projected.spre"
        result = runner.invoke(
            main,
            ["project", str(trained), "--n", "2", "--m", "4", "--out", str(projected)],
        )
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["pattern"] == "2:4"

        csv_out = tmp_path / "profile.csv"
        result = runner.invoke(main, ["profile", str(projected), "--out", str(csv_out)])
        assert result.exit_code == 0, result.output
        header = csv_out.read_text().splitlines()[0]
        assert header == "layer,u,v,spatial_sparsity"

    def test_spre_build_from_dense_checkpoint(self, runner, tmp_path):
        config = _write_config(
            tmp_path, mask_mode="dense", checkpoint_out=str(tmp_path / "dense.spre")
        )
        result = runner.invoke(main, ["train", "--config", str(config)])
        assert result.exit_code == 0, result.output

        out = tmp_path / "two_branch.spre"
        result = runner.invoke(
            main,
            ["spre-build", str(tmp_path / "dense.spre"), "--n", "1", "--m", "4",
             "--variant", "inverse", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert body["variant"] == "inverse"
        entries = load_checkpoint(out)
        stray = entries["s0b0.b_extra"] * (1 - entries["s0b0.b_main"])
        assert not stray.any()  # the extra branch stays inside the main support


class TestErrorOutput:
    def test_missing_checkpoint_is_single_line_json_on_stderr(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["profile", str(tmp_path / "ghost.spre"), "--out", str(tmp_path / "o.csv")],
        )
        assert result.exit_code == 1
        lines = result.stderr.strip().splitlines()
        assert len(lines) == 1
        err = json.loads(lines[0])
        assert err["kind"] == "FileNotFoundError"
        assert "ghost.spre" in err["error"]

    def test_config_error_kind_passes_through(self, runner, trained, tmp_path):
        result = runner.invoke(
            main,
            ["spre-build", str(trained), "--n", "1", "--m", "4",
             "--out", str(tmp_path / "x.spre")],
        )
        assert result.exit_code == 1
        assert json.loads(result.stderr.strip())["kind"] == "ConfigError"

    def test_unreachable_server_fails_cleanly(self, runner, trained, tmp_path):
        result = runner.invoke(
            main,
            ["profile", str(trained), "--out", str(tmp_path / "o.csv"),
             "--server", "http://127.0.0.1:1"],
        )
        assert result.exit_code == 1
        assert json.loads(result.stderr.strip())["kind"] == "ConnectionError"


class TestPredictionParity:
    def test_merged_checkpoint_classifies_exactly_like_two_branch(self, trained, tmp_path):
        from nmsparse.model import model_from_entries
        from nmsparse.training import predict

        runner = CliRunner()
        merged_path = tmp_path / "merged.spre"
        runner.invoke(main, ["reparam", str(trained), "--out", str(merged_path)])

        two = model_from_entries(load_checkpoint(trained))
        merged = model_from_entries(load_checkpoint(merged_path))
        x = np.random.default_rng(3).standard_normal((16, 3, 8, 8))
        assert np.array_equal(predict(two, x), predict(merged, x))
