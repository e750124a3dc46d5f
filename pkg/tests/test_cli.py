from __future__ import annotations

import csv
import json

import pytest

from posecast.cli import run

TINY_CFG = {"model": {"width": 32, "d_ctx": 32, "n_points": 16, "point_widths": [16, 16, 16], "knn_k": 4, "S": 5},
            "train": {"batch_size": 4, "K_warmup": 1}}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY_CFG))
    assert run(["synth-gen", "--count", "10", "--seed", "2", "--out", str(root / "data")]) == 0
    assert run(["train", "--data", str(root / "data" / "windows.jsonl"), "--config", str(cfg), "--steps", "2",
                "--out", str(root / "run")]) == 0
    return root


def test_synth_gen_outputs(workspace):
    lines = (workspace / "data" / "windows.jsonl").read_text().splitlines()
    assert len(lines) == 10
    assert json.loads((workspace / "data" / "meta.json").read_text())["seed"] == 2


def test_train_outputs(workspace):
    assert (workspace / "run" / "checkpoint.ofck").read_bytes()[:4] == b"OFCK"
    rows = list(csv.reader((workspace / "run" / "curve.csv").open()))
    assert rows[0][0] == "step" and len(rows) == 3


def test_sample_deterministic(workspace, tmp_path):
    args = ["sample", "--checkpoint", str(workspace / "run" / "checkpoint.ofck"),
            "--data", str(workspace / "data" / "windows.jsonl"), "--window", "syn-000003", "--seed", "7",
            "--samples", "2"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "trajectory.json").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.json").read_bytes()
    doc = json.loads(a)
    assert doc["clip_id"] == "syn-000003" and len(doc["samples"]) == 2 and len(doc["samples"][0]) == 8
    assert (tmp_path / "a" / "overlay.svg").read_text().startswith("<svg")


def test_eval_baseline_constant_velocity(tmp_path):
    cfg = tmp_path / "cv.json"
    cfg.write_text(json.dumps({"count": 6, "n_points": 8,
                               "primitives": [{"kind": "slide", "distance": [0.1, 0.3], "direction": "random_xz"}]}))
    assert run(["synth-gen", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    assert run(["eval", "--data", str(tmp_path / "d" / "windows.jsonl"), "--baseline", "constant-velocity",
                "--out", str(tmp_path / "e")]) == 0
    metrics = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert metrics["ade"] < 1e-9


def test_eval_checkpoint(workspace, tmp_path):
    assert run(["eval", "--data", str(workspace / "data" / "windows.jsonl"),
                "--checkpoint", str(workspace / "run" / "checkpoint.ofck"), "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert rows[0] == ["metric", "value", "n"] and rows[1][0] == "ade"


def test_curate(tmp_path):
    assert run(["synth-gen", "--stream", "4", "--points", "8", "--seed", "1", "--out", str(tmp_path)]) == 0
    assert run(["curate", "--stream", str(tmp_path / "stream.jsonl"), "--out", str(tmp_path / "cur")]) == 0
    funnel = dict(csv.reader((tmp_path / "cur" / "funnel.csv").open()))
    n = len((tmp_path / "cur" / "windows.jsonl").read_text().splitlines())
    assert int(funnel["postfilter_windows"]) == n
    assert int(funnel["segments"]) == 4


def test_ablate(workspace, tmp_path):
    cfg = workspace / "cfg.json"
    assert run(["ablate", "--data", str(workspace / "data" / "windows.jsonl"), "--config", str(cfg), "--steps", "1",
                "--C", "1,3", "--H", "4", "--out", str(tmp_path)]) == 0
    rows = list(csv.reader((tmp_path / "ablation.csv").open()))
    assert rows[0][:2] == ["C", "H"] and len(rows) == 3


def test_gradcheck(tmp_path, capsys):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"model": {"width": 32, "d_ctx": 32, "n_points": 8, "point_widths": [8, 8, 8],
                                         "knn_k": 4, "depth": 1}}))
    assert run(["gradcheck", "--config", str(cfg), "--probes", "20"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["probes"] == 20 and out["max_rel_error"] < 1e-4


def test_inspect(workspace, capsys):
    assert run(["inspect", str(workspace / "run" / "checkpoint.ofck")]) == 0
    assert "parameters" in capsys.readouterr().out
    assert run(["inspect", str(workspace / "data" / "windows.ofpc")]) == 0
    assert "block @0" in capsys.readouterr().out
    assert run(["inspect", str(workspace / "data" / "windows.jsonl"), "--limit", "2"]) == 0
    assert "10 windows" in capsys.readouterr().out


def test_exit_codes(tmp_path, workspace):
    with pytest.raises(SystemExit) as exc:
        run(["train"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run(["sample", "--checkpoint", "x", "--data", "y", "--samples", "0", "--out", str(tmp_path)])
    assert exc.value.code == 1
    assert run(["eval", "--data", str(tmp_path / "missing.jsonl"), "--baseline", "constant-pose",
                "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.ofck"
    bad.write_bytes(b"garbage")
    assert run(["sample", "--checkpoint", str(bad), "--data", str(workspace / "data" / "windows.jsonl"),
                "--out", str(tmp_path)]) == 2
    assert run(["train", "--data", str(workspace / "data" / "windows.jsonl"), "--H", "7",
                "--out", str(tmp_path)]) == 2
