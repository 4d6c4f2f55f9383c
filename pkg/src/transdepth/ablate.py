"""Ablation sweeps: retrain config variants under one seed and one dataset."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

from transdepth.config import RunConfig
from transdepth.data import Dataset
from transdepth.train import evaluate, load_dataset, train

log = logging.getLogger(__name__)

AXES = ("vit_on_off", "agd_on_off", "emitting_sets", "components")
EMITTING_SETS = ((), (5,), (4, 5), (3, 4, 5), (2, 3, 4, 5))


def _variant(base: RunConfig, vit: bool | None = None, agd: bool | None = None,
             emitting: tuple[int, ...] | None = None) -> RunConfig:
    payload = base.to_json()
    model = payload["model"]
    if vit is not None:
        model["transformer"]["enabled"] = vit
    if agd is not None:
        model["agd"]["enabled"] = agd
    if emitting is not None:
        model["agd"]["enabled"] = bool(emitting)
        if emitting:
            model["agd"]["emitting_scales"] = list(emitting)
    return RunConfig.model_validate(payload)


def axis_variants(base: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    """Named configs for one ablation axis, in table order."""
    if axis == "vit_on_off":
        return [("vit_off", _variant(base, vit=False)), ("vit_on", _variant(base, vit=True))]
    if axis == "agd_on_off":
        return [("agd_off", _variant(base, agd=False)), ("agd_on", _variant(base, agd=True))]
    if axis == "emitting_sets":
        names = ["none" if not s else "+".join(f"f{i}" for i in s) for s in EMITTING_SETS]
        return [(n, _variant(base, emitting=s)) for n, s in zip(names, EMITTING_SETS)]
    if axis == "components":
        return [
            ("baseline", _variant(base, vit=False, agd=False)),
            ("agd", _variant(base, vit=False, agd=True)),
            ("vit", _variant(base, vit=True, agd=False)),
            ("full", _variant(base, vit=True, agd=True)),
        ]
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXES)}")


def run_ablation(base: RunConfig, axis: str, train_data: Dataset | None = None,
                 eval_data: Dataset | None = None) -> list[dict]:
    """Train and evaluate every variant of ``axis`` on the same data; one dict per row."""
    variants = axis_variants(base, axis)
    train_data = train_data if train_data is not None else load_dataset(base, "train")
    eval_data = eval_data if eval_data is not None else load_dataset(base, "eval")
    rows = []
    for name, cfg in variants:
        log.info("ablation %s: training variant %s", axis, name)
        result = train(cfg, data=train_data)
        report = evaluate(result.checkpoint, eval_data)
        row = {
            "axis": axis,
            "variant": name,
            "initial_loss": result.initial_loss,
            "final_train_loss": result.final_loss,
            "data_hash": result.data_hash,
            "eval_data_hash": eval_data.content_hash(),
        }
        row.update(report.model_dump())
        rows.append(row)
    return rows


def write_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: f"{v:.15g}" if isinstance(v, float) else v for k, v in row.items()})
    return path
