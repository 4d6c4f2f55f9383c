"""Training loop, AdamW optimizer, and whole-set evaluation."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from transdepth.checkpoint import Checkpoint, save_checkpoint
from transdepth.config import RunConfig
from transdepth.data import Dataset, ingest_directory, synth_dataset
from transdepth.errors import ConfigError, DomainError, NonFiniteError, TrainingDiverged
from transdepth.metrics import MetricsReport, depth_metrics_from_values, normal_metrics_from_angles, angles_deg
from transdepth.model import TransDepth
from transdepth.numerics.tensor import Tensor, no_grad

log = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay: ``p <- p * (1 - lr * wd)`` before the Adam step."""

    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * update

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def load_dataset(cfg: RunConfig, split: str = "train") -> Dataset:
    """The configured training or evaluation set."""
    d = cfg.data
    if d.source == "directory":
        return ingest_directory(d.path, d.convention)
    if split == "train":
        return synth_dataset(d.seed, d.n_train, d.image_h, d.image_w)
    if d.n_eval < 1:
        raise DomainError("data.n_eval is 0: no evaluation scenes configured")
    return synth_dataset(d.seed, d.n_eval, d.image_h, d.image_w, start=d.n_train)


def batch_schedule(n: int, batch_size: int, steps: int, seed: int) -> list[np.ndarray]:
    """Index batches for every step: reshuffled epochs from a Philox stream keyed by ``seed``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x7D])))
    size = min(batch_size, n)
    batches: list[np.ndarray] = []
    order = np.empty(0, dtype=np.int64)
    while len(batches) < steps:
        if order.size < size:
            order = np.concatenate([order, rng.permutation(n)])
        batches.append(np.sort(order[:size]))
        order = order[size:]
    return batches


def dataset_loss(model: TransDepth, data: Dataset) -> float:
    """Task loss over every valid pixel of ``data`` taken as one batch."""
    with no_grad():
        pred = model(data.images)
        return model.loss(pred, data.targets(model.cfg.task), data.mask).item()


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    data_hash: str = ""


def train(cfg: RunConfig, out_dir: str | Path | None = None, data: Dataset | None = None) -> TrainResult:
    """Train from scratch; deterministic given the config.

    Writes ``train_log.csv`` (step, loss, wall_ms), periodic and final
    checkpoints, and ``summary.json`` into ``out_dir`` when given.
    """
    tc = cfg.training
    data = data if data is not None else load_dataset(cfg, "train")
    task = cfg.model.task
    targets = data.targets(task)
    model = TransDepth(cfg.model, seed=tc.seed)
    opt = AdamW(model.parameters(), tc.lr, tc.weight_decay, (tc.adam_beta1, tc.adam_beta2), tc.adam_eps)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    data_hash = data.content_hash()
    initial = dataset_loss(model, data)
    log.info("training %d steps on %d samples (data %s), initial loss %.6g", tc.steps, len(data), data_hash, initial)
    rows: list[tuple[int, float, float]] = []
    schedule = batch_schedule(len(data), tc.batch_size, tc.steps, tc.seed)
    for step, idx in enumerate(schedule, start=1):
        t0 = time.perf_counter()
        opt.zero_grad()
        try:
            pred = model(data.images[idx])
            loss = model.loss(pred, targets[idx], data.mask[idx])
            loss.backward()
        except NonFiniteError as exc:
            _dump_divergence(out, step, idx, str(exc))
            raise TrainingDiverged(f"step {step}: non-finite values on batch {idx.tolist()} ({exc})") from exc
        opt.step()
        rows.append((step, loss.item(), (time.perf_counter() - t0) * 1000.0))
        if out is not None and tc.checkpoint_every and step % tc.checkpoint_every == 0 and step < tc.steps:
            save_checkpoint(Checkpoint.from_model(model, cfg, step), out / f"ckpt_{step:06d}.tdck")

    ckpt = Checkpoint.from_model(model, cfg, tc.steps)
    final = dataset_loss(ckpt.build_model(), data)
    log.info("final loss %.6g (%.1f%% of initial)", final, 100.0 * final / initial if initial else float("nan"))
    if out is not None:
        save_checkpoint(ckpt, out / "model.tdck")
        with open(out / "train_log.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "wall_ms"])
            for step, value, ms in rows:
                writer.writerow([step, f"{value:.15g}", f"{ms:.3f}"])
        summary = {"initial_loss": initial, "final_loss": final, "steps": tc.steps, "data_hash": data_hash}
        (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return TrainResult(ckpt, [r[1] for r in rows], initial, final, data_hash)


def _dump_divergence(out: Path | None, step: int, idx: np.ndarray, message: str) -> None:
    log.error("non-finite value at step %d, batch %s: %s", step, idx.tolist(), message)
    if out is not None:
        payload = {"step": step, "batch_indices": idx.tolist(), "error": message}
        (out / "divergence.json").write_text(json.dumps(payload, indent=2) + "\n")


def eval_workers() -> int:
    try:
        return max(1, int(os.environ.get("TD_THREADS", "1")))
    except ValueError:
        return 1


def predict(model: TransDepth, images: np.ndarray, batch_size: int = 2, workers: int = 1) -> np.ndarray:
    """Forward ``images`` in batches; output order matches input order."""
    chunks = [images[i : i + batch_size] for i in range(0, len(images), batch_size)]

    def run(chunk: np.ndarray) -> np.ndarray:
        with no_grad():
            return model(chunk).data

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run, chunks))
    else:
        outputs = [run(c) for c in chunks]
    return np.concatenate(outputs)


def evaluate(ckpt: Checkpoint, data: Dataset, workers: int | None = None) -> MetricsReport:
    """Metrics accumulated over all valid pixels of the whole set (no per-image averaging)."""
    if len(data) == 0:
        raise DomainError("cannot evaluate an empty dataset")
    task = ckpt.config.model.task
    if task == "normals" and data.normals is None:
        raise ConfigError("checkpoint predicts normals but the dataset has no normal ground truth")
    model = ckpt.build_model()
    pred = predict(model, data.images, ckpt.config.training.batch_size, workers or eval_workers())
    if task == "depth":
        mask = data.mask & (data.depth > 0)
        return depth_metrics_from_values(pred[mask], data.depth[mask])
    return normal_metrics_from_angles(angles_deg(pred, data.normals, data.mask))
