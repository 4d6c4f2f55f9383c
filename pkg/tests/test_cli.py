import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from transdepth.cli import main
from transdepth.data import read_depth_png, write_rgb_png
from transdepth.metrics import report_from_json

SMALL = {
    "training": {"steps": 2, "seed": 1},
    "data": {"image_h": 32, "image_w": 32, "n_train": 2, "n_eval": 2},
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root


def test_train_writes_checkpoint(trained):
    assert (trained / "run" / "model.tdck").exists()
    assert (trained / "run" / "train_log.csv").exists()


def test_eval_synth_report(trained, capsys):
    report = trained / "rep" / "metrics.json"
    assert main(["eval", "--ckpt", str(trained / "run" / "model.tdck"), "--data", "synth", "--report", str(report)]) == 0
    rep = report_from_json(report.read_text())
    assert rep.task == "depth" and rep.n_pixels == 2 * 32 * 32
    assert json.loads(capsys.readouterr().out) == json.loads(report.read_text())


def test_eval_directory(trained, tmp_path):
    assert main(["synth", "--seed", "3", "--n", "2", "--out", str(tmp_path / "d"), "--height", "32", "--width", "32"]) == 0
    report = tmp_path / "m.json"
    assert main(["eval", "--ckpt", str(trained / "run" / "model.tdck"), "--data", str(tmp_path / "d"),
                 "--report", str(report)]) == 0
    assert report_from_json(report.read_text()).n_pixels == 2 * 32 * 32


def test_synth_reproducible(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--seed", "9", "--n", "2", "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["depth_0000.png", "depth_0001.png", "image_0000.png", "image_0001.png",
                     "normal_0000.npy", "normal_0001.npy"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


@pytest.mark.parametrize("args", [
    ["--seed", "-1", "--n", "1"],
    ["--seed", str(2**64), "--n", "1"],
    ["--seed", "0", "--n", "0"],
    ["--seed", "0", "--n", "1", "--height", "40"],
])
def test_synth_argument_errors(args, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", *args, "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_gradcheck_pass(capsys):
    assert main(["gradcheck", "--scope", "losses"]) == 0
    assert capsys.readouterr().out.startswith("PASS scope=losses")


def test_gradcheck_unknown_scope():
    with pytest.raises(SystemExit):
        main(["gradcheck", "--scope", "everything"])


def test_predict_png_and_raw(trained, tmp_path):
    image = np.random.default_rng(0).uniform(size=(3, 40, 70))
    write_rgb_png(tmp_path / "in.png", image)
    ckpt = str(trained / "run" / "model.tdck")
    assert main(["predict", "--ckpt", ckpt, "--image", str(tmp_path / "in.png"), "--out", str(tmp_path / "o.png")]) == 0
    meters, valid = read_depth_png(tmp_path / "o.png")
    assert meters.shape == (32, 64) and valid.all()
    assert main(["predict", "--ckpt", ckpt, "--image", str(tmp_path / "in.png"), "--out", str(tmp_path / "o.raw")]) == 0
    raw = np.frombuffer((tmp_path / "o.raw").read_bytes(), dtype="<f4")
    assert raw.size == 32 * 64 and np.all((raw > 0.1) & (raw < 10.0))
    assert np.max(np.abs(raw.reshape(32, 64) - meters)) <= 0.5 / 256 + 1e-6


def test_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"unknown": 1}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert capsys.readouterr().err.startswith("error:")
    (tmp_path / "x.tdck").write_bytes(b"garbage")
    assert main(["eval", "--ckpt", str(tmp_path / "x.tdck"), "--data", "synth", "--report", str(tmp_path / "r")]) == 1
    assert main(["eval", "--ckpt", str(tmp_path / "missing.tdck"), "--data", "synth", "--report", "r"]) == 1


def test_ablate_command(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, "training": {"steps": 1, "seed": 1}}))
    out = tmp_path / "abl.csv"
    assert main(["ablate", "--config", str(cfg), "--axis", "vit_on_off", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["variant"] for r in rows] == ["vit_off", "vit_on"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "transdepth", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "eval", "gradcheck", "synth", "ablate", "predict"):
        assert cmd in proc.stdout
