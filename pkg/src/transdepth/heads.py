"""Depth and surface-normal prediction heads.

Both share an upsampling trunk: one (bilinear x2 -> 3x3 conv -> relu) block per
octave between the fused grid and the image, then a 1x1 output convolution.
"""

from __future__ import annotations

import math

from transdepth.config import HeadConfig, LossConfig
from transdepth.errors import DimensionError
from transdepth.nn import Conv2d, Module, xavier_std
from transdepth.numerics import ops
from transdepth.numerics.tensor import Tensor


def octaves_between(src: tuple[int, int], dst: tuple[int, int]) -> int:
    """Number of x2 steps from ``src`` to ``dst``; both axes must agree on a power of two."""
    (h, w), (th, tw) = src, dst
    if th % h or tw % w:
        raise DimensionError(f"cannot upsample {h}x{w} to {th}x{tw} by doubling")
    fh, fw = th // h, tw // w
    if fh != fw or fh & (fh - 1):
        raise DimensionError(f"cannot upsample {h}x{w} to {th}x{tw} by doubling")
    return int(math.log2(fh))


class UpsampleTrunk(Module):
    def __init__(self, c_in: int, n_octaves: int, cfg: HeadConfig):
        super().__init__()
        self.n_octaves = n_octaves
        widths = [cfg.channels[min(j, len(cfg.channels) - 1)] for j in range(n_octaves)]
        ins = [c_in, *widths[:-1]]
        self.convs = [Conv2d(a, b, 3) for a, b in zip(ins, widths)]
        self.out_channels = widths[-1] if widths else c_in

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            h, w = x.shape[2:]
            x = ops.relu(conv(ops.bilinear_resize(x, 2 * h, 2 * w)))
        return x


class DepthHead(Module):
    def __init__(self, c_in: int, n_octaves: int, head_cfg: HeadConfig, loss_cfg: LossConfig):
        super().__init__()
        self.min_depth = loss_cfg.min_depth
        self.max_depth = loss_cfg.max_depth
        self.trunk = UpsampleTrunk(c_in, n_octaves, head_cfg)
        c = self.trunk.out_channels
        self.out = Conv2d(c, 1, 1, init=("normal", xavier_std(c, 1)))

    def forward(self, fused: Tensor, target_h: int, target_w: int) -> Tensor:
        return depth_head(fused, target_h, target_w, self)


def depth_head(fused: Tensor, target_h: int, target_w: int, head: DepthHead) -> Tensor:
    n = octaves_between(fused.shape[2:], (target_h, target_w))
    if n != head.trunk.n_octaves:
        raise DimensionError(f"head built for {head.trunk.n_octaves} octaves, input needs {n}")
    s = ops.sigmoid(head.out(head.trunk(fused)))
    return s * (head.max_depth - head.min_depth) + head.min_depth


class NormalHead(Module):
    def __init__(self, c_in: int, n_octaves: int, head_cfg: HeadConfig):
        super().__init__()
        self.trunk = UpsampleTrunk(c_in, n_octaves, head_cfg)
        c = self.trunk.out_channels
        self.out = Conv2d(c, 3, 1, init=("normal", xavier_std(c, 3)))

    def forward(self, fused: Tensor, target_h: int, target_w: int) -> Tensor:
        return normal_head(fused, target_h, target_w, self)


def normal_head(fused: Tensor, target_h: int, target_w: int, head: NormalHead) -> Tensor:
    n = octaves_between(fused.shape[2:], (target_h, target_w))
    if n != head.trunk.n_octaves:
        raise DimensionError(f"head built for {head.trunk.n_octaves} octaves, input needs {n}")
    return ops.l2_normalize(head.out(head.trunk(fused)), axis=1, eps=1e-8)
