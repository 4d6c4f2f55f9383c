"""Training losses: scale-invariant log depth loss and angular normal loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from transdepth.config import LossConfig
from transdepth.errors import DimensionError, DomainError
from transdepth.numerics import ops
from transdepth.numerics.tensor import Tensor, as_tensor

ANGLE_CLAMP = 1.0 - 1e-7


@dataclass
class DepthPair:
    """Predicted and ground-truth depth (meters) with a validity mask."""

    pred: Tensor
    gt: np.ndarray
    valid_mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.pred = as_tensor(self.pred)
        self.gt = np.asarray(self.gt, dtype=np.float64)
        if self.valid_mask is None:
            self.valid_mask = np.ones(self.gt.shape, dtype=bool)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if not (self.pred.shape == self.gt.shape == self.valid_mask.shape):
            raise DimensionError(
                f"depth pair shapes differ: pred {self.pred.shape}, gt {self.gt.shape}, mask {self.valid_mask.shape}"
            )

    @property
    def T(self) -> int:
        return int(self.valid_mask.sum())

    @property
    def g(self) -> np.ndarray:
        pred, gt = self.valid_values()
        return np.log(pred) - np.log(gt)

    def valid_values(self) -> tuple[np.ndarray, np.ndarray]:
        if self.T < 1:
            raise DomainError("no valid pixels")
        pred = self.pred.data[self.valid_mask]
        gt = self.gt[self.valid_mask]
        if np.any(gt <= 0) or np.any(pred <= 0):
            raise DomainError("depth must be strictly positive on valid pixels")
        return pred, gt


def silog_loss(pair: DepthPair, cfg: LossConfig | None = None) -> Tensor:
    """alpha * sqrt(mean(g^2) - lambda * mean(g)^2), g = log(pred) - log(gt).

    The radicand is clamped at zero; the gradient there is zero.
    """
    cfg = cfg or LossConfig()
    pair.valid_values()  # domain checks
    t = pair.T
    g = ops.log(ops.masked_select(pair.pred, pair.valid_mask)) - np.log(pair.gt[pair.valid_mask])
    s1 = (g * g).sum() * (1.0 / t)
    s2 = g.sum()
    radicand = s1 - (s2 * s2) * (cfg.lam / (t * t))
    return ops.sqrt_scalar(radicand) * cfg.alpha


def angular_loss(pred: Tensor, gt, mask=None) -> Tensor:
    """Mean angle in radians between unit normal fields ``N x 3 x H x W`` over valid pixels."""
    pred = as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 4 or pred.shape[1] != 3:
        raise DimensionError(f"normal fields must be N x 3 x H x W and match, got {pred.shape}, {gt.shape}")
    n, _, h, w = pred.shape
    mask = np.ones((n, 1, h, w), dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(n, 1, h, w)
    if not mask.any():
        raise DomainError("angular_loss: no valid pixels")
    dot = (pred * gt).sum(axis=1, keepdims=True)
    cos = ops.clip(ops.masked_select(dot, mask), -ANGLE_CLAMP, ANGLE_CLAMP)
    return ops.arccos(cos).mean()
