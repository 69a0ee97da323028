"""Subprocess-level checks of the command line: exit codes, files, determinism."""

import csv
import json
import subprocess
import sys

import pytest

BASE = [sys.executable, "-m", "imbaseg.cli"]


def run_cli(*args, env=None):
    return subprocess.run(BASE + list(args), capture_output=True, text=True, env=env)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny generated dataset plus a run config that trains in seconds."""
    root = tmp_path_factory.mktemp("cli")
    spec = {
        "height": 20, "width": 20, "n_train": 4, "n_test": 2,
        "blob_count": [1, 1], "blob_radius": [1.5, 2.5], "ratio_band": [15.0, 40.0],
    }
    (root / "task.json").write_text(json.dumps(spec))
    proc = run_cli("gen-data", "--spec", str(root / "task.json"), "--out", str(root / "data"), "--seed", "7")
    assert proc.returncode == 0, proc.stderr
    manifest = root / "data" / "manifest.jsonl"
    assert manifest.is_file()

    cfg = {
        "name": "smoke",
        "data": {"manifest": str(manifest)},
        "loss": {"kind": "CE"},
        "optimizer": {"steps": 20, "batch_size": 2, "patch_size": 12},
        "net": {"hidden": [4, 6]},
        "seeds": [0],
        "out_dir": str(root / "run"),
    }
    (root / "run.json").write_text(json.dumps(cfg))
    return root


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gen_data_output(workspace):
    lines = [json.loads(line) for line in (workspace / "data" / "manifest.jsonl").read_text().splitlines()]
    records = [r for r in lines if "split" in r]  # first line is the task header
    assert len(records) == 6
    assert sum(r["split"] == "train" for r in records) == 4


def test_gen_data_rejects_unknown_key(workspace, tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"blobs": 3}))
    proc = run_cli("gen-data", "--spec", str(tmp_path / "bad.json"), "--out", str(tmp_path / "d"))
    assert proc.returncode == 2
    assert "config error at task.blobs" in proc.stderr


def test_train_eval_diagnose_roundtrip(workspace):
    proc = run_cli("train", "--config", str(workspace / "run.json"))
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip().endswith("results.csv")

    rows = read_csv(workspace / "run" / "results.csv")
    assert rows[0] == [
        "run_id", "seed", "loss_kind", "train_fraction",
        "dsc", "sen", "prc", "spc", "hd95_raw", "hd95_post", "wall_time",
    ]
    assert len(rows) == 2 and rows[1][0] == "smoke"

    ckpt = workspace / "run" / "checkpoints" / "smoke_f1_s0.ckpt"
    assert ckpt.is_file()

    manifest = workspace / "data" / "manifest.jsonl"
    scores = workspace / "scores.csv"
    proc = run_cli("eval", "--checkpoint", str(ckpt), "--manifest", str(manifest), "--out", str(scores))
    assert proc.returncode == 0, proc.stderr
    rows = read_csv(scores)
    assert rows[0] == ["image_index", "dsc", "sen", "prc", "spc", "fbeta", "hd95"]
    assert len(rows) == 3  # header + one row per test image

    # postprocessed scoring is a separate pass over the same checkpoint
    proc = run_cli("eval", "--checkpoint", str(ckpt), "--manifest", str(manifest),
                   "--post", "on", "--out", str(workspace / "scores_post.csv"))
    assert proc.returncode == 0, proc.stderr

    proc = run_cli("diagnose", "--checkpoint", str(ckpt), "--manifest", str(manifest),
                   "--out", str(workspace / "diag"))
    assert proc.returncode == 0, proc.stderr
    report = json.loads((workspace / "diag" / "logit_shift.json").read_text())
    assert set(report["classes"]) == {"0", "1"}
    hist = read_csv(workspace / "diag" / "logit_shift_hist.csv")
    assert len(hist) > 2


def test_train_divergence_exits_3(workspace, tmp_path):
    cfg = json.loads((workspace / "run.json").read_text())
    cfg["optimizer"]["lr"] = 1e160
    cfg["optimizer"]["steps"] = 5
    cfg["out_dir"] = str(tmp_path / "run")
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    proc = run_cli("train", "--config", str(tmp_path / "run.json"))
    assert proc.returncode == 3
    assert "diverged" in proc.stderr
    assert (tmp_path / "run" / "results.csv").is_file()  # NaN row still recorded


def test_config_error_exit_2_with_field_path(workspace, tmp_path):
    cfg = json.loads((workspace / "run.json").read_text())
    cfg["loss"] = {"kind": "CE", "gama": 1.0}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    proc = run_cli("train", "--config", str(tmp_path / "run.json"))
    assert proc.returncode == 2
    assert "config error at loss.gama" in proc.stderr


def test_missing_manifest_exit_2(workspace, tmp_path):
    cfg = json.loads((workspace / "run.json").read_text())
    cfg["data"] = {"manifest": str(tmp_path / "nowhere.jsonl")}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    proc = run_cli("train", "--config", str(tmp_path / "run.json"))
    assert proc.returncode == 2
    assert "data.manifest" in proc.stderr


def test_missing_checkpoint_exit_3(workspace, tmp_path):
    proc = run_cli("eval", "--checkpoint", str(tmp_path / "no.ckpt"),
                   "--manifest", str(workspace / "data" / "manifest.jsonl"))
    assert proc.returncode == 3
    assert proc.stderr.startswith("error:")


def strip_wall_time(path):
    rows = read_csv(path)
    i = rows[0].index("wall_time")
    return [row[:i] + row[i + 1:] for row in rows]


def test_sweep_rerun_identical_csv(workspace, tmp_path):
    grid = {
        "data": {"manifest": str(workspace / "data" / "manifest.jsonl")},
        "rarity": [0.0, 1.0],
        "optimizer": {"steps": 10, "batch_size": 2, "patch_size": 12},
        "net": {"hidden": [4]},
        "variants": [
            {"name": "ce", "loss": {"kind": "CE"}},
            {"name": "af", "loss": {"kind": "focalCE", "gamma": 2.0, "asymmetric": True}},
        ],
        "fractions": [1.0, 0.5],
        "seeds": [0, 1],
    }
    (tmp_path / "grid.json").write_text(json.dumps(grid))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        proc = run_cli("sweep", "--grid", str(tmp_path / "grid.json"), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
    assert strip_wall_time(out_a / "results.csv") == strip_wall_time(out_b / "results.csv")
    assert len(read_csv(out_a / "results.csv")) == 9  # header + 2 variants x 2 fractions x 2 seeds


def test_log_level_env_var(workspace):
    import os

    env = dict(os.environ, IMBASEG_LOG_LEVEL="INFO")
    proc = run_cli("train", "--config", str(workspace / "run.json"), env=env)
    assert proc.returncode == 0
    assert "cell smoke_f1_s0" in proc.stderr  # info-level progress lines

    proc = run_cli("train", "--config", str(workspace / "run.json"))
    assert proc.returncode == 0
    assert "cell smoke_f1_s0" not in proc.stderr  # default WARNING is quiet
