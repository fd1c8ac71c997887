from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from bscale_recog.bscale import DEFAULT_TS
from bscale_recog.cli import dispatch
from bscale_recog.evaluation import CSV_COLUMNS, read_csv
from bscale_recog.volume import Scene, load_volume, save_volume


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert dispatch(["phantom", "gen", "--n", "3", "--seed", "4", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def model(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "model.json"
    assert dispatch(["model", "build", "--data", str(dataset), "--out", str(out), "--kmax", "10"]) == 0
    return out


def test_help_exits_zero(capsys):
    assert dispatch(["--help"]) == 0
    out = capsys.readouterr().out
    for cmd in ("bscale", "wbs-threshold", "model", "recognize", "phantom", "eval", "config"):
        assert cmd in out


def test_no_command_prints_help(capsys):
    assert dispatch([]) == 2
    assert "usage" in capsys.readouterr().out


def test_unknown_subcommand(capsys):
    assert dispatch(["frobnicate"]) == 2
    assert "frobnicate" in capsys.readouterr().err


def test_out_of_range_ts(capsys, tmp_path):
    assert dispatch(["bscale", "--input", str(tmp_path / "x.mhd"), "--out-wbs", "y.mhd", "--ts", "1.5"]) == 2
    assert "ts" in capsys.readouterr().err


def test_default_ts_in_help_and_config(capsys):
    assert dispatch(["bscale", "--help"]) == 0
    assert f"(default: {DEFAULT_TS})" in capsys.readouterr().out
    assert dispatch(["config", "show"]) == 0
    assert json.loads(capsys.readouterr().out)["ts"] == DEFAULT_TS


def test_config_file_merged_and_flags_win(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"ts": 0.7, "kmax": 12}))
    assert dispatch(["config", "show", "--config", str(cfg), "--kmax", "9"]) == 0
    shown = json.loads(capsys.readouterr().out)
    assert (shown["ts"], shown["kmax"], shown["percentile"]) == (0.7, 9, 75.0)
    assert dispatch(["--config", str(cfg), "config", "show"]) == 0
    assert json.loads(capsys.readouterr().out)["kmax"] == 12


def test_bad_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"ts": 2}))
    assert dispatch(["config", "show", "--config", str(cfg)]) == 2
    assert dispatch(["config", "show", "--config", str(tmp_path / "missing.json")]) == 1


def test_missing_input_file(capsys, tmp_path):
    assert dispatch(["bscale", "--input", str(tmp_path / "none.mhd"), "--out-wbs", str(tmp_path / "o.mhd")]) == 1
    assert "error" in capsys.readouterr().err


def test_bscale_requires_an_output(capsys, tmp_path):
    assert dispatch(["bscale", "--input", str(tmp_path / "x.mhd")]) == 2


def test_bscale_and_threshold(tmp_path):
    f = np.zeros((20, 20, 20), np.uint16)
    f[5:15, 5:15, 5:15] = 100
    save_volume(Scene(f, (1.0, 1.0, 1.0)), tmp_path / "s.mhd")
    assert dispatch(["bscale", "--input", str(tmp_path / "s.mhd"), "--out-wbs", str(tmp_path / "w.mhd"),
                     "--out-r", str(tmp_path / "r.mhd"), "--kmax", "6", "--sigma", "5"]) == 0
    r = load_volume(tmp_path / "r.mhd").data
    w = load_volume(tmp_path / "w.mhd").data
    assert r[10, 10, 10] == 5 and r[0, 0, 0] >= 1
    np.testing.assert_array_equal(w, np.float32(f) * np.float32(r))
    assert dispatch(["wbs-threshold", "--input", str(tmp_path / "w.mhd"), "--out", str(tmp_path / "m.mhd"),
                     "--lo", "400"]) == 0
    m = load_volume(tmp_path / "m.mhd").data
    np.testing.assert_array_equal(m, w >= 400)
    assert dispatch(["wbs-threshold", "--input", str(tmp_path / "w.mhd"), "--out", str(tmp_path / "m.mhd"),
                     "--lo", "9", "--hi", "1"]) == 2


def test_dataset_layout(dataset):
    meta = json.loads((dataset / "dataset.json").read_text())
    assert meta["n"] == 3 and meta["spec"]["seed"] == 4
    assert (dataset / "subject_002" / "scene.mhd").exists()


def test_model_build_and_recognize(model, dataset, tmp_path):
    d = json.loads(model.read_text())
    assert d["meta"]["config"]["kmax"] == 10
    out = tmp_path / "r.json"
    scene = str(dataset / "subject_000" / "scene.mhd")
    assert dispatch(["recognize", "--input", scene, "--model", str(model), "--out", str(out),
                     "--refine-skin", "--probe-deltaf"]) == 0
    res = json.loads(out.read_text())
    assert res["config"]["kmax"] == 10  # taken from the model
    assert set(res["placed"]) == set(d["labels"])
    assert len(res["pose"]["R"]) == 9 and res["pose"]["s"] > 0
    diag = res["diagnostics"]
    assert {"pc_bi", "wbs_interval", "predicted_origin", "containment"} <= set(diag)
    assert diag["containment"] > 0.5


def test_recognize_bad_model(tmp_path, dataset, capsys):
    bad = tmp_path / "m.json"
    bad.write_text("{}")
    scene = str(dataset / "subject_000" / "scene.mhd")
    assert dispatch(["recognize", "--input", scene, "--model", str(bad), "--out", str(tmp_path / "o.json")]) == 1
    assert "ModelFormatError" in capsys.readouterr().err


def test_eval_loocv_csv(dataset, tmp_path, capsys):
    out = tmp_path / "e.csv"
    assert dispatch(["eval", "loocv", "--data", str(dataset), "--out", str(out), "--kmax", "10",
                     "--objects", "skin,liver"]) == 0
    assert "skin+liver" in capsys.readouterr().out
    assert json.loads(out.read_text().splitlines()[0][len("# config: "):])["kmax"] == 10
    rows = read_csv(out)
    assert len(rows) == 3 and tuple(rows[0]) == CSV_COLUMNS


def test_eval_unknown_object(dataset, tmp_path):
    assert dispatch(["eval", "loocv", "--data", str(dataset), "--out", str(tmp_path / "e.csv"),
                     "--objects", "heart"]) == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bscale_recog", "config", "show"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["kmax"] == 26
