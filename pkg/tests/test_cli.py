"""End-to-end command-line behaviour on a small workspace."""

import csv
import filecmp
import json
import shutil
import subprocess

import numpy as np
import pytest

from conftest import tiny_config
from fovalign.alignment import init_parameters
from fovalign.checkpoint import load_checkpoint
from fovalign.cli import main
from fovalign.config import config_from_dict
from fovalign.errors import NumericError


def write_config(path, **path_overrides):
    """Dump the tiny test config with absolute workspace paths."""
    raw = tiny_config().to_dict()
    raw["paths"] = {
        "dataset": path_overrides["dataset"],
        "checkpoint": path_overrides["checkpoint"],
        "input_image": path_overrides["input_image"],
        "runs": path_overrides.get("runs", [path_overrides["checkpoint"].rsplit("/", 1)[0]]),
    }
    path.write_text(json.dumps(raw, indent=2), encoding="utf-8")
    return raw


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated dataset + one trained run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    write_config(
        cfg_path,
        dataset=str(root / "data"),
        checkpoint=str(root / "run" / "checkpoint.bick"),
        input_image=str(root / "data" / "images" / "sample_00000.ppm"),
    )
    assert main(["generate", "--config", str(cfg_path)]) == 0
    assert main(["train", "--config", str(cfg_path)]) == 0
    return {"root": root, "config": cfg_path}


class TestGenerate:
    def test_artifacts_and_manifest(self, workspace):
        data = workspace["root"] / "data"
        assert (data / "bank.bicp").exists()
        images = sorted((data / "images").glob("sample_*.ppm"))
        assert len(images) == 44  # 4 train classes x 10 + 4 test classes x 1
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["command"] == "generate"
        assert manifest["seed"] == manifest["config"]["data"]["seed"]

    def test_refuses_to_overwrite(self, workspace, capsys):
        assert main(["generate", "--config", str(workspace["config"])]) == 2
        assert "already exists (pass --force to overwrite)" in capsys.readouterr().err

    def test_force_overwrites_identically(self, tmp_path, workspace):
        cfg = tmp_path / "cfg.json"
        write_config(
            cfg,
            dataset=str(tmp_path / "data"),
            checkpoint=str(tmp_path / "run" / "checkpoint.bick"),
            input_image=str(tmp_path / "in.ppm"),
        )
        assert main(["generate", "--config", str(cfg)]) == 0
        assert main(["generate", "--config", str(cfg), "--force"]) == 0
        assert filecmp.cmp(
            tmp_path / "data" / "bank.bicp",
            workspace["root"] / "data" / "bank.bicp",
            shallow=False,
        )

    def test_seed_flag_changes_dataset(self, tmp_path, workspace):
        cfg = tmp_path / "cfg.json"
        write_config(
            cfg,
            dataset=str(tmp_path / "data"),
            checkpoint=str(tmp_path / "run" / "checkpoint.bick"),
            input_image=str(tmp_path / "in.ppm"),
        )
        assert main(["generate", "--config", str(cfg), "--seed", "99"]) == 0
        manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
        assert manifest["seed"] == 99
        assert manifest["config"]["data"]["seed"] == 99
        assert not filecmp.cmp(
            tmp_path / "data" / "bank.bicp",
            workspace["root"] / "data" / "bank.bicp",
            shallow=False,
        )


class TestTransform:
    def test_writes_four_views(self, workspace, tmp_path):
        out = tmp_path / "views"
        code = main([
            "transform", "--config", str(workspace["config"]), "--out", str(out)
        ])
        assert code == 0
        names = sorted(p.name for p in out.glob("*.ppm"))
        assert names == ["foveated.ppm", "lowres.ppm", "mosaic.ppm", "noise.ppm"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "transform"
        assert manifest["seed"] == 0  # default noise seed

    def test_noise_seed_reproducible(self, workspace, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b", tmp_path / "c"]
        for out, seed in zip(outs, ("3", "3", "4")):
            assert main([
                "transform", "--config", str(workspace["config"]),
                "--out", str(out), "--seed", seed,
            ]) == 0
        assert filecmp.cmp(outs[0] / "noise.ppm", outs[1] / "noise.ppm", shallow=False)
        assert not filecmp.cmp(outs[0] / "noise.ppm", outs[2] / "noise.ppm", shallow=False)
        # the deterministic views ignore the noise seed
        assert filecmp.cmp(outs[0] / "foveated.ppm", outs[2] / "foveated.ppm", shallow=False)

    def test_missing_input_image(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        write_config(
            cfg,
            dataset=str(tmp_path / "data"),
            checkpoint=str(tmp_path / "run" / "checkpoint.bick"),
            input_image=str(tmp_path / "missing.ppm"),
        )
        assert main(["transform", "--config", str(cfg), "--out", str(tmp_path / "v")]) == 2
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_artifacts(self, workspace):
        run = workspace["root"] / "run"
        assert (run / "checkpoint.bick").exists()
        with open(run / "metrics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == [
            "epoch", "loss", "mean_smoothed_sim",
            "kernel_min", "kernel_mean", "kernel_max", "t_lower", "t_upper",
        ]
        assert len(rows) == 1 + 2  # header + one line per epoch
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seed"] == manifest["config"]["training"]["seed"]

    def test_checkpoint_metadata(self, workspace):
        arrays, meta = load_checkpoint(workspace["root"] / "run" / "checkpoint.bick")
        cfg = config_from_dict(json.loads(workspace["config"].read_text()))
        assert meta["epochs"] == cfg.training.epochs
        assert meta["dim_neural"] == cfg.data.dim_neural
        assert meta["view_names"] == cfg.views.enabled()
        assert set(arrays) == set(init_parameters(cfg, cfg.data.dim_neural))
        assert sum(meta["kernel_hist"].values()) == 40

    def test_manifest_reproduces_run_bit_for_bit(self, workspace, tmp_path):
        run = workspace["root"] / "run"
        out = tmp_path / "replay"
        assert main([
            "train", "--config", str(run / "manifest.json"), "--out", str(out)
        ]) == 0
        assert filecmp.cmp(run / "checkpoint.bick", out / "checkpoint.bick", shallow=False)
        assert filecmp.cmp(run / "metrics.csv", out / "metrics.csv", shallow=False)

    def test_seed_flag_changes_training(self, workspace, tmp_path):
        out = tmp_path / "other-seed"
        assert main([
            "train", "--config", str(workspace["config"]),
            "--out", str(out), "--seed", "1234",
        ]) == 0
        assert not filecmp.cmp(
            workspace["root"] / "run" / "checkpoint.bick",
            out / "checkpoint.bick", shallow=False,
        )

    def test_zero_epochs_checkpoint_is_initialization(self, workspace, tmp_path):
        raw = json.loads(workspace["config"].read_text())
        raw["training"]["epochs"] = 0
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(raw))
        out = tmp_path / "run0"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        arrays, meta = load_checkpoint(out / "checkpoint.bick")
        fresh = init_parameters(config_from_dict(raw), raw["data"]["dim_neural"])
        for name, ref in fresh.items():
            np.testing.assert_array_equal(arrays[name], ref.astype(np.float32))
        assert meta["final_loss"] is None

    def test_missing_dataset(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        write_config(
            cfg,
            dataset=str(tmp_path / "nowhere"),
            checkpoint=str(tmp_path / "run" / "checkpoint.bick"),
            input_image=str(tmp_path / "in.ppm"),
        )
        assert main(["train", "--config", str(cfg)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_numeric_failure_dumps_state(self, workspace, tmp_path, monkeypatch, capsys):
        class ExplodingTrainer:
            def __init__(self, *args):
                pass

            def train(self):
                raise NumericError("non-finite loss at epoch 0, batch 1",
                                   state={"epoch": 0, "batch": 1})

        monkeypatch.setattr("fovalign.cli.Trainer", ExplodingTrainer)
        out = tmp_path / "boom"
        code = main([
            "train", "--config", str(workspace["config"]), "--out", str(out)
        ])
        assert code == 3
        err = capsys.readouterr().err
        assert "numeric failure: non-finite loss" in err
        assert '"batch": 1' in err  # diagnostic state serialized to stderr


class TestEvaluate:
    def test_artifacts_and_manifest_isolation(self, workspace):
        run = workspace["root"] / "run"
        assert main(["evaluate", "--config", str(workspace["config"])]) == 0
        with open(run / "eval.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["n"]) for r in rows] == [4, 2]
        for r in rows:
            assert 0.0 <= float(r["top1"]) <= float(r["top5"]) <= 1.0
            assert r["subject"] == "synthetic"
        summary = (run / "summary.txt").read_text()
        assert "4 zero-shot test queries" in summary
        assert "n=4:" in summary and "n=2:" in summary
        # evaluate keeps its manifest apart from the training manifest
        eval_manifest = json.loads((run / "eval_manifest.json").read_text())
        assert eval_manifest["command"] == "evaluate"
        train_manifest = json.loads((run / "manifest.json").read_text())
        assert train_manifest["command"] == "train"

    def test_eval_manifest_seed_not_adopted_by_train(self, workspace, tmp_path):
        # replaying a training run from the evaluation manifest must reuse
        # the config's training seed, not the evaluation seed
        run = workspace["root"] / "run"
        out = tmp_path / "from-eval-manifest"
        assert main([
            "train", "--config", str(run / "eval_manifest.json"), "--out", str(out)
        ]) == 0
        assert filecmp.cmp(run / "checkpoint.bick", out / "checkpoint.bick", shallow=False)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == manifest["config"]["training"]["seed"]

    def test_reproducible(self, workspace, tmp_path):
        outs = [tmp_path / "e1", tmp_path / "e2"]
        for out in outs:
            assert main([
                "evaluate", "--config", str(workspace["config"]), "--out", str(out)
            ]) == 0
        assert filecmp.cmp(outs[0] / "eval.csv", outs[1] / "eval.csv", shallow=False)

    def test_feature_width_mismatch_names_both_sides(self, workspace, tmp_path, capsys):
        raw = json.loads(workspace["config"].read_text())
        raw["provider"]["dim_feature"] = 24
        raw["fusion"]["dim_latent"] = 24  # keep the model self-consistent
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(raw))
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 2
        err = capsys.readouterr().err
        assert "16" in err and "24" in err

    def test_missing_checkpoint(self, workspace, tmp_path, capsys):
        raw = json.loads(workspace["config"].read_text())
        raw["paths"]["checkpoint"] = str(tmp_path / "none.bick")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(raw))
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 2


class TestReport:
    def test_aggregates_runs(self, workspace, tmp_path):
        run = workspace["root"] / "run"
        if not (run / "eval.csv").exists():
            assert main(["evaluate", "--config", str(workspace["config"])]) == 0
        second = tmp_path / "other-run"
        second.mkdir()
        shutil.copy(run / "eval.csv", second / "eval.csv")

        raw = json.loads(workspace["config"].read_text())
        raw["paths"]["runs"] = [str(run), str(second)]
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(raw))
        out = tmp_path / "report"
        assert main(["report", "--config", str(cfg), "--out", str(out)]) == 0
        with open(out / "report.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4  # two runs x two gallery sizes
        assert {r["run"] for r in rows} == {str(run), str(second)}

    def test_missing_eval_rejected(self, workspace, tmp_path, capsys):
        raw = json.loads(workspace["config"].read_text())
        raw["paths"]["runs"] = [str(tmp_path / "empty-run")]
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(raw))
        assert main(["report", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
        assert "run `evaluate`" in capsys.readouterr().err

    def test_mangled_eval_columns_rejected(self, workspace, tmp_path, capsys):
        bad_run = tmp_path / "bad-run"
        bad_run.mkdir()
        (bad_run / "eval.csv").write_text("a,b\n1,2\n")
        raw = json.loads(workspace["config"].read_text())
        raw["paths"]["runs"] = [str(bad_run)]
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(raw))
        assert main(["report", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
        assert "unexpected columns" in capsys.readouterr().err


class TestErrorSurface:
    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"data": {"classez": 3}}))
        assert main(["generate", "--config", str(cfg)]) == 2
        assert "unknown config key: data.classez" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path, capsys):
        assert main(["generate", "--config", str(tmp_path / "nope.json")]) == 2
        assert "cannot read config" in capsys.readouterr().err

    def test_console_script_help(self):
        proc = subprocess.run(
            ["fovalign", "--help"], capture_output=True, text=True, timeout=60
        )
        assert proc.returncode == 0
        for word in ("generate", "transform", "train", "evaluate", "report"):
            assert word in proc.stdout
