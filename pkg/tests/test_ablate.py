import csv

import pytest

from transdepth.ablate import AXES, EMITTING_SETS, axis_variants, run_ablation, write_csv
from transdepth.config import parse_config

BASE = parse_config({
    "training": {"steps": 1, "seed": 2},
    "data": {"image_h": 32, "image_w": 32, "n_train": 2, "n_eval": 1},
})


def test_component_variants():
    variants = dict(axis_variants(BASE, "components"))
    assert list(variants) == ["baseline", "agd", "vit", "full"]
    flags = {k: (v.model.transformer.enabled, v.model.agd.enabled) for k, v in variants.items()}
    assert flags == {"baseline": (False, False), "agd": (False, True), "vit": (True, False), "full": (True, True)}
    # everything else is held fixed
    assert all(v.training == BASE.training and v.data == BASE.data for v in variants.values())


def test_emitting_set_variants():
    variants = axis_variants(BASE, "emitting_sets")
    assert [name for name, _ in variants] == ["none", "f5", "f4+f5", "f3+f4+f5", "f2+f3+f4+f5"]
    assert not variants[0][1].model.agd.enabled
    assert [v.model.agd.emitting_scales for _, v in variants[1:]] == [list(s) for s in EMITTING_SETS[1:]]


@pytest.mark.parametrize("axis", AXES)
def test_every_axis_has_variants(axis):
    assert len(axis_variants(BASE, axis)) >= 2


def test_unknown_axis():
    with pytest.raises(ValueError):
        axis_variants(BASE, "dropout")


def test_run_and_write(tmp_path):
    rows = run_ablation(BASE, "agd_on_off")
    assert [r["variant"] for r in rows] == ["agd_off", "agd_on"]
    assert len({r["data_hash"] for r in rows}) == 1 and len({r["eval_data_hash"] for r in rows}) == 1
    assert rows[0]["data_hash"] != rows[0]["eval_data_hash"]
    assert all(r["axis"] == "agd_on_off" and r["task"] == "depth" for r in rows)
    path = tmp_path / "out" / "a.csv"
    write_csv(rows, path)
    read = list(csv.DictReader(path.open()))
    assert len(read) == 2 and float(read[1]["final_train_loss"]) == pytest.approx(rows[1]["final_train_loss"], rel=1e-14)
