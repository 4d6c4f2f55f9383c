"""Toy five-stage residual encoder producing the feature pyramid f1..f5."""

from __future__ import annotations

from dataclasses import dataclass

from transdepth.config import BackboneConfig
from transdepth.errors import DimensionError
from transdepth.nn import Conv2d, Module
from transdepth.numerics import ops
from transdepth.numerics.tensor import Tensor


@dataclass
class FeaturePyramid:
    """Features at strides 2, 4, 8, 16, 32 (``levels[0]`` is f1)."""

    levels: list[Tensor]

    def __getitem__(self, scale: int) -> Tensor:
        if not 1 <= scale <= len(self.levels):
            raise DimensionError(f"no pyramid level f{scale}")
        return self.levels[scale - 1]

    def replace(self, scale: int, feature: Tensor) -> "FeaturePyramid":
        levels = list(self.levels)
        levels[scale - 1] = feature
        return FeaturePyramid(levels)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [f.shape for f in self.levels]


class ResidualBlock(Module):
    """relu(conv(relu(conv(x))) + shortcut(x)), no normalization.

    The second convolution starts at zero, so a fresh block with an identity
    shortcut computes relu(x).
    """

    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        if stride not in (1, 2):
            raise DimensionError(f"residual block stride must be 1 or 2, got {stride}")
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.conv1 = Conv2d(c_in, c_out, 3, stride=stride)
        self.conv2 = Conv2d(c_out, c_out, 3, init=("zeros",))
        self.shortcut = Conv2d(c_in, c_out, 1, stride=stride) if (c_in != c_out or stride == 2) else None

    def forward(self, x: Tensor) -> Tensor:
        return residual_block(x, self)


def residual_block(x: Tensor, block: ResidualBlock) -> Tensor:
    if x.ndim != 4 or x.shape[1] != block.c_in:
        raise DimensionError(f"residual block expects {block.c_in} input channels, got shape {x.shape}")
    h = ops.relu(block.conv1(x))
    h = block.conv2(h)
    skip = block.shortcut(x) if block.shortcut is not None else x
    return ops.relu(h + skip)


class Stage(Module):
    def __init__(self, c_in: int, c_out: int, n_blocks: int):
        super().__init__()
        self.blocks = [ResidualBlock(c_in, c_out, stride=2)]
        self.blocks += [ResidualBlock(c_out, c_out) for _ in range(n_blocks - 1)]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = Conv2d(3, cfg.stem_channels, 3)
        widths = [cfg.stem_channels, *cfg.stage_channels]
        self.stages = [Stage(widths[s], widths[s + 1], cfg.blocks_per_stage[s]) for s in range(5)]

    def run_stem(self, image: Tensor) -> Tensor:
        check_image(image)
        return ops.relu(self.stem(image))

    def forward(self, image: Tensor) -> FeaturePyramid:
        x = self.run_stem(image)
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(levels)


def check_image(image: Tensor) -> None:
    if image.ndim != 4 or image.shape[1] != 3:
        raise DimensionError(f"expected an N x 3 x H x W image batch, got {image.shape}")
    h, w = image.shape[2:]
    if h % 32 or w % 32:
        raise DimensionError(f"image size {h}x{w} is not a multiple of 32")


def backbone_forward(image: Tensor, backbone: Backbone) -> FeaturePyramid:
    return backbone(image)
