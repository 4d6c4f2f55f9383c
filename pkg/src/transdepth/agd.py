"""Attention gate decoder: fuse emitting pyramid levels into the receiving level.

For every emitting scale i, with f_e and f_r projected to a common width and
aligned to the receiving grid:

    L, I_re, I_er = per-position maps predicted linearly from the features
    A     = I_er * f_r + I_re * f_e + f_r * L * f_e
    alpha = softmax_over_positions(A_sp) * sigmoid(A_ch) * A
    slot  = (L * f_e) * alpha + f_r

``*`` is elementwise with the single-channel maps broadcast over channels.
The slots are concatenated on the channel axis in ascending scale order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from transdepth.backbone import FeaturePyramid
from transdepth.config import AGDConfig, BackboneConfig
from transdepth.errors import ConfigError, DimensionError
from transdepth.nn import Conv2d, Linear, Module, xavier_std
from transdepth.numerics import ops
from transdepth.numerics.tensor import Tensor


@dataclass
class LatentKernels:
    L: Tensor
    I_re: Tensor
    I_er: Tensor


@dataclass
class AttentionMaps:
    A: Tensor
    A_sp: Tensor
    A_ch: Tensor
    spatial: Tensor
    channel: Tensor
    alpha: Tensor


class KernelPredictor(Module):
    def __init__(self, width: int, kernel_size: int = 1):
        super().__init__()
        k = kernel_size
        self.kernel_l = Conv2d(2 * width, 1, k, init=("normal", xavier_std(2 * width * k * k, 1)))
        self.kernel_re = Conv2d(width, 1, k, init=("normal", xavier_std(width * k * k, 1)))
        self.kernel_er = Conv2d(width, 1, k, init=("normal", xavier_std(width * k * k, 1)))


class AttentionGate(Module):
    def __init__(self, width: int):
        super().__init__()
        # no bias: the spatial softmax is shift invariant, so a bias would be a dead parameter
        self.spatial = Conv2d(width, 1, 1, init=("normal", xavier_std(width, 1)), bias=False)
        self.channel = Linear(width, width)


class ScaleFusion(Module):
    """Parameters for one emitting scale."""

    def __init__(self, c_emit: int, width: int, kernel_size: int):
        super().__init__()
        self.project = Conv2d(c_emit, width, 1)
        self.kernels = KernelPredictor(width, kernel_size)
        self.gate = AttentionGate(width)


class AttentionGateDecoder(Module):
    def __init__(self, backbone_cfg: BackboneConfig, cfg: AGDConfig):
        super().__init__()
        self.cfg = cfg
        widths = backbone_cfg.stage_channels
        self.receive_project = Conv2d(widths[cfg.receiving_scale - 1], cfg.common_width, 1)
        self.scales = {}
        if cfg.enabled:
            self.scales = {
                str(i): ScaleFusion(widths[i - 1], cfg.common_width, cfg.kernel_size) for i in cfg.emitting_scales
            }

    @property
    def out_channels(self) -> int:
        n = len(self.scales) if self.cfg.enabled else 1
        return n * self.cfg.common_width

    def forward(self, pyramid: FeaturePyramid) -> Tensor:
        if self.cfg.enabled:
            return agd_fuse(pyramid, self)
        return agd_bypass(pyramid, self)


def align_emitters(pyramid: FeaturePyramid, decoder: AttentionGateDecoder) -> tuple[list[Tensor], Tensor]:
    """Project each emitting level and the receiving level to the common width on the receiving grid."""
    f_r = decoder.receive_project(pyramid[decoder.cfg.receiving_scale])
    h_r, w_r = f_r.shape[2:]
    aligned = []
    for key, fusion in decoder.scales.items():
        f_e = fusion.project(pyramid[int(key)])
        aligned.append(ops.bilinear_resize(f_e, h_r, w_r))
    return aligned, f_r


def latent_kernels(f_e: Tensor, f_r: Tensor, kp: KernelPredictor) -> LatentKernels:
    if f_e.shape != f_r.shape:
        raise DimensionError(f"unaligned features {f_e.shape} vs {f_r.shape}")
    return LatentKernels(
        L=kp.kernel_l(ops.concat([f_e, f_r], axis=1)),
        I_re=kp.kernel_re(f_e),
        I_er=kp.kernel_er(f_r),
    )


def integrated_attention(f_e: Tensor, f_r: Tensor, k: LatentKernels) -> Tensor:
    return k.I_er * f_r + k.I_re * f_e + f_r * k.L * f_e


def spatial_softmax(logits: Tensor) -> Tensor:
    """Softmax jointly over all H*W positions of an ``N x 1 x H x W`` map."""
    n, c, h, w = logits.shape
    return ops.softmax_last(logits.reshape(n, c, h * w)).reshape(n, c, h, w)


def attention_gate(A: Tensor, gate: AttentionGate) -> AttentionMaps:
    a_sp = gate.spatial(A)
    n, c = A.shape[:2]
    a_ch = gate.channel(ops.global_avg_pool(A).reshape(n, c)).reshape(n, c, 1, 1)
    spatial = spatial_softmax(a_sp)
    channel = ops.sigmoid(a_ch)
    return AttentionMaps(A=A, A_sp=a_sp, A_ch=a_ch, spatial=spatial, channel=channel, alpha=spatial * channel * A)


def fuse_scale(f_e: Tensor, f_r: Tensor, fusion: ScaleFusion, message_source: str = "emit") -> Tensor:
    kernels = latent_kernels(f_e, f_r, fusion.kernels)
    maps = attention_gate(integrated_attention(f_e, f_r, kernels), fusion.gate)
    source = f_e if message_source == "emit" else f_r
    return (kernels.L * source) * maps.alpha + f_r


def agd_fuse(pyramid: FeaturePyramid, decoder: AttentionGateDecoder) -> Tensor:
    if not decoder.cfg.enabled:
        raise ConfigError("agd_fuse called with the decoder disabled")
    aligned, f_r = align_emitters(pyramid, decoder)
    slots = [
        fuse_scale(f_e, f_r, fusion, decoder.cfg.message_source)
        for f_e, fusion in zip(aligned, decoder.scales.values())
    ]
    return ops.concat(slots, axis=1)


def agd_bypass(pyramid: FeaturePyramid, decoder: AttentionGateDecoder) -> Tensor:
    """Baseline path: only the projected receiving feature."""
    return decoder.receive_project(pyramid[decoder.cfg.receiving_scale])


def zero_fusion_parameters(decoder: AttentionGateDecoder) -> None:
    """Zero every kernel-predictor and gate parameter (projections untouched)."""
    for fusion in decoder.scales.values():
        for module in (fusion.kernels, fusion.gate):
            for _, p in module.named_parameters():
                p.data = np.zeros_like(p.data)
