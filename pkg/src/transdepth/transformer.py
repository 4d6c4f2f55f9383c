"""Patch embedding, multi-head self-attention layers, and the hybrid encoder.

Tokens carry no position embedding, so every layer is equivariant under a
permutation of the token axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from transdepth.backbone import Backbone, FeaturePyramid
from transdepth.config import BackboneConfig, TransformerConfig
from transdepth.errors import DimensionError
from transdepth.nn import Conv2d, LayerNorm, Linear, Module, xavier_std
from transdepth.numerics import ops
from transdepth.numerics.tensor import Tensor


@dataclass
class TokenMatrix:
    """Tokens of shape ``B x N_tok x C`` in row-major patch order."""

    tokens: Tensor
    origin_h: int
    origin_w: int
    patch: int = 1

    @property
    def grid(self) -> tuple[int, int]:
        return self.origin_h // self.patch, self.origin_w // self.patch


class PatchEmbed(Module):
    def __init__(self, c_in: int, hidden: int, patch: int):
        super().__init__()
        self.patch = patch
        fan_in = c_in * patch * patch
        self.param("weight", (fan_in, hidden), ("normal", xavier_std(fan_in, hidden)))
        self.param("bias", (hidden,), ("zeros",))

    def forward(self, f: Tensor) -> TokenMatrix:
        return patch_embed(f, self.weight, self.bias, self.patch)


def patch_embed(f: Tensor, weight: Tensor, bias: Tensor | None, patch: int) -> TokenMatrix:
    """Non-overlapping ``p x p`` patches projected linearly (a stride-p convolution).

    ``weight`` has shape ``(C_in * p * p) x C`` with rows ordered (channel, dy, dx).
    """
    if f.ndim != 4:
        raise DimensionError(f"patch_embed expects NCHW, got {f.shape}")
    b, c, h, w = f.shape
    p = patch
    if h % p or w % p:
        raise DimensionError(f"feature map {h}x{w} is not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = f.reshape(b, c, gh, p, gw, p).transpose(0, 2, 4, 1, 3, 5).reshape(b, gh * gw, c * p * p)
    z = ops.matmul(x, weight)
    if bias is not None:
        z = z + bias
    return TokenMatrix(z, h, w, p)


def tokens_to_feature(z: TokenMatrix) -> Tensor:
    """Fold tokens back to a ``B x C x H/p x W/p`` map, inverting the patch order."""
    gh, gw = z.grid
    b, n_tok, c = z.tokens.shape
    if n_tok != gh * gw:
        raise DimensionError(f"{n_tok} tokens cannot fill a {gh}x{gw} grid")
    return z.tokens.reshape(b, gh, gw, c).transpose(0, 3, 1, 2)


def attention_weights(z: Tensor, w_q: Tensor, w_k: Tensor) -> Tensor:
    q = ops.matmul(z, w_q)
    k = ops.matmul(z, w_k)
    d = w_q.shape[-1]
    scores = ops.matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(d))
    return ops.softmax_last(scores)


def attention_head(z: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V for tokens ``z`` (``... x N_tok x C``)."""
    return ops.matmul(attention_weights(z, w_q, w_k), ops.matmul(z, w_v))


class MultiHeadAttention(Module):
    def __init__(self, hidden: int, num_heads: int, head_dim: int):
        super().__init__()
        self.num_heads = num_heads
        std = xavier_std(hidden, head_dim)
        # per-head projections stacked on a leading head axis: m x C x d
        self.param("w_q", (num_heads, hidden, head_dim), ("normal", std))
        self.param("w_k", (num_heads, hidden, head_dim), ("normal", std))
        self.param("w_v", (num_heads, hidden, head_dim), ("normal", std))
        self.param("w_o", (num_heads * head_dim, hidden), ("normal", xavier_std(num_heads * head_dim, hidden)))

    def head(self, i: int) -> tuple[Tensor, Tensor, Tensor]:
        return self.w_q[i], self.w_k[i], self.w_v[i]

    def forward(self, z: Tensor) -> Tensor:
        return msa(z, self)


def msa(z: Tensor, attn: MultiHeadAttention) -> Tensor:
    """z + concat(AH_1, ..., AH_m) W_o, heads concatenated on the feature axis."""
    # B x 1 x N x C against m x C x d broadcasts to B x m x N x d
    zb = z.reshape(z.shape[0], 1, *z.shape[1:])
    heads = attention_head(zb, attn.w_q, attn.w_k, attn.w_v)
    b, m, n, d = heads.shape
    cat = heads.transpose(0, 2, 1, 3).reshape(b, n, m * d)
    return z + ops.matmul(cat, attn.w_o)


class MLP(Module):
    def __init__(self, hidden: int, ratio: float):
        super().__init__()
        inner = max(1, int(round(hidden * ratio)))
        self.fc1 = Linear(hidden, inner)
        self.fc2 = Linear(inner, hidden)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class TransformerLayer(Module):
    """z' = MSA(z); z_out = MLP(LN(z')) + z'.

    With ``pre_ln`` a second LayerNorm is applied before attention (the usual
    ViT arrangement); the attention residual still adds the un-normalized input.
    """

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.pre_ln = cfg.pre_ln
        self.attn = MultiHeadAttention(cfg.hidden, cfg.num_heads, cfg.head_dim)
        self.ln = LayerNorm(cfg.hidden)
        self.mlp = MLP(cfg.hidden, cfg.mlp_ratio)
        if cfg.pre_ln:
            self.ln_attn = LayerNorm(cfg.hidden)

    def forward(self, z: Tensor) -> Tensor:
        return transformer_layer(z, self)


def transformer_layer(z: Tensor, layer: TransformerLayer) -> Tensor:
    if layer.pre_ln:
        attn = layer.attn
        zn = layer.ln_attn(z)
        heads = attention_head(zn.reshape(zn.shape[0], 1, *zn.shape[1:]), attn.w_q, attn.w_k, attn.w_v)
        b, m, n, d = heads.shape
        z_mid = z + ops.matmul(heads.transpose(0, 2, 1, 3).reshape(b, n, m * d), attn.w_o)
    else:
        z_mid = msa(z, layer.attn)
    return layer.mlp(layer.ln(z_mid)) + z_mid


class TransformerBlock(Module):
    """patch_embed -> L layers -> final LN -> fold back -> 1x1 projection to the stage width.

    The layers end on an un-normalized residual sum whose scale grows with L;
    the final LayerNorm (skipped when L=0) bounds it before the tokens rejoin
    the convolutional stream. The projection is linear, hence Xavier rather
    than He init, which keeps its output near the backbone feature scale.
    """

    def __init__(self, c_stage: int, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        p = cfg.patch_kernel
        self.embed = PatchEmbed(c_stage, cfg.hidden, p)
        self.layers = [TransformerLayer(cfg) for _ in range(cfg.num_layers)]
        self.final_ln = LayerNorm(cfg.hidden) if self.layers else None
        self.project = Conv2d(cfg.hidden, c_stage, 1, init=("normal", xavier_std(cfg.hidden, c_stage)))

    def forward(self, f: Tensor) -> Tensor:
        tm = self.embed(f)
        z = tm.tokens
        for layer in self.layers:
            z = layer(z)
        if self.final_ln is not None:
            z = self.final_ln(z)
        out = self.project(tokens_to_feature(TokenMatrix(z, tm.origin_h, tm.origin_w, tm.patch)))
        h, w = f.shape[2:]
        if out.shape[2:] != (h, w):
            out = ops.bilinear_resize(out, h, w)
        return out


class HybridEncoder(Module):
    """Residual backbone with a transformer inserted at f4 or f5."""

    def __init__(self, backbone_cfg: BackboneConfig, tr_cfg: TransformerConfig):
        super().__init__()
        self.tr_cfg = tr_cfg
        self.backbone = Backbone(backbone_cfg)
        self.transformer = None
        if tr_cfg.enabled:
            c_stage = backbone_cfg.stage_channels[tr_cfg.insertion_scale - 1]
            self.transformer = TransformerBlock(c_stage, tr_cfg)

    def forward(self, image: Tensor) -> FeaturePyramid:
        return encoder_forward(image, self)


def encoder_forward(image: Tensor, encoder: HybridEncoder) -> FeaturePyramid:
    backbone = encoder.backbone
    x = backbone.run_stem(image)
    insert_at = encoder.tr_cfg.insertion_scale if encoder.transformer is not None else None
    levels = []
    for s, stage in enumerate(backbone.stages, start=1):
        x = stage(x)
        if s == insert_at:
            x = encoder.transformer(x)
        levels.append(x)
    return FeaturePyramid(levels)


def set_identity_transformer(block: TransformerBlock) -> None:
    """Make the block an exact pass-through (requires p=1, hidden == stage width, L=0)."""
    c_stage = block.project.weight.shape[0]
    if block.cfg.patch_kernel != 1 or block.cfg.hidden != c_stage or block.layers:
        raise DimensionError("identity transformer needs p=1, hidden equal to the stage width, and no layers")
    block.embed.weight.data = np.eye(c_stage)
    block.embed.bias.data = np.zeros(c_stage)
    block.project.weight.data = np.eye(c_stage)[:, :, None, None]
    block.project.bias.data = np.zeros(c_stage)
