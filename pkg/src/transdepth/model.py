"""Full network: hybrid encoder -> attention gate decoder -> task head."""

from __future__ import annotations

import numpy as np

from transdepth.agd import AttentionGateDecoder
from transdepth.config import ModelConfig
from transdepth.heads import DepthHead, NormalHead
from transdepth.losses import DepthPair, angular_loss, silog_loss
from transdepth.nn import Module
from transdepth.numerics.tensor import Tensor, as_tensor
from transdepth.transformer import HybridEncoder


class TransDepth(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoder = HybridEncoder(cfg.backbone, cfg.transformer)
        self.decoder = AttentionGateDecoder(cfg.backbone, cfg.agd)
        # the fused map lives on the receiving grid, 2**scale below the image
        octaves = cfg.agd.receiving_scale
        if cfg.task == "depth":
            self.head = DepthHead(self.decoder.out_channels, octaves, cfg.head, cfg.loss)
        else:
            self.head = NormalHead(self.decoder.out_channels, octaves, cfg.head)
        self.initialize(seed)

    def features(self, image: Tensor) -> Tensor:
        return self.decoder(self.encoder(image))

    def forward(self, image) -> Tensor:
        image = as_tensor(image)
        h, w = image.shape[2:]
        return self.head(self.features(image), h, w)

    def loss(self, pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
        if self.cfg.task == "depth":
            return silog_loss(DepthPair(pred, target, mask), self.cfg.loss)
        return angular_loss(pred, target, mask)
