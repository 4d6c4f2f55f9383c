"""Run configuration.

All models forbid unknown keys so a typo in a config file fails loudly
instead of silently falling back to a default.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from transdepth.errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class BackboneConfig(_Strict):
    stem_channels: int = Field(16, ge=1)
    stage_channels: list[int] = Field(default_factory=lambda: [16, 32, 64, 128, 256])
    blocks_per_stage: list[int] = Field(default_factory=lambda: [1, 1, 1, 1, 1])

    @field_validator("stage_channels", "blocks_per_stage")
    @classmethod
    def _five_positive(cls, v: list[int]) -> list[int]:
        if len(v) != 5 or any(c < 1 for c in v):
            raise ValueError("need exactly 5 positive entries")
        return v


class TransformerConfig(_Strict):
    enabled: bool = True
    num_layers: int = Field(2, ge=0)
    hidden: int = Field(32, ge=1)
    num_heads: int = Field(4, ge=1)
    head_dim: int = Field(8, ge=1)
    mlp_ratio: float = Field(2.0, gt=0)
    patch_kernel: int = Field(1, ge=1)
    insertion: Literal["f4", "f5"] = "f5"
    pre_ln: bool = False

    @property
    def insertion_scale(self) -> int:
        return int(self.insertion[1])


class AGDConfig(_Strict):
    enabled: bool = True
    receiving_scale: int = Field(5, ge=1, le=5)
    emitting_scales: list[int] = Field(default_factory=lambda: [3, 4, 5])
    common_width: int = Field(32, ge=1)
    kernel_size: int = Field(1, ge=1)
    message_source: Literal["emit", "receive"] = "emit"

    @field_validator("emitting_scales")
    @classmethod
    def _scales(cls, v: list[int]) -> list[int]:
        if not v or any(s < 1 or s > 5 for s in v) or len(set(v)) != len(v):
            raise ValueError("emitting_scales must be a nonempty set drawn from 1..5")
        return sorted(v)

    @field_validator("kernel_size")
    @classmethod
    def _odd(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("kernel_size must be odd")
        return v


class HeadConfig(_Strict):
    channels: list[int] = Field(default_factory=lambda: [32, 32, 16, 16, 16])

    @field_validator("channels")
    @classmethod
    def _positive(cls, v: list[int]) -> list[int]:
        if not v or any(c < 1 for c in v):
            raise ValueError("head channels must be a nonempty list of positive ints")
        return v


class LossConfig(_Strict):
    lam: float = Field(0.85, alias="lambda", ge=0.0, le=1.0)
    alpha: float = Field(10.0, gt=0.0)
    min_depth: float = Field(0.1, gt=0.0)
    max_depth: float = 10.0

    @model_validator(mode="after")
    def _range(self) -> "LossConfig":
        if not self.min_depth < self.max_depth:
            raise ValueError("need 0 < min_depth < max_depth")
        return self


class ModelConfig(_Strict):
    task: Literal["depth", "normals"] = "depth"
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    transformer: TransformerConfig = Field(default_factory=TransformerConfig)
    agd: AGDConfig = Field(default_factory=AGDConfig)
    head: HeadConfig = Field(default_factory=HeadConfig)
    loss: LossConfig = Field(default_factory=LossConfig)


class TrainingConfig(_Strict):
    lr: float = Field(1e-4, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    batch_size: int = Field(2, ge=1)
    steps: int = Field(500, ge=0)
    seed: int = Field(42, ge=0, lt=2**64)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    checkpoint_every: int = Field(0, ge=0)


class DataConfig(_Strict):
    source: Literal["synth", "directory"] = "synth"
    path: str | None = None
    convention: Literal["kitti_png16", "npy_like_raw"] = "kitti_png16"
    seed: int = Field(0, ge=0, lt=2**64)
    image_h: int = 64
    image_w: int = 64
    n_train: int = Field(8, ge=1)
    n_eval: int = Field(8, ge=0)

    @model_validator(mode="after")
    def _check(self) -> "DataConfig":
        if self.image_h < 32 or self.image_w < 32 or self.image_h % 32 or self.image_w % 32:
            raise ValueError("image_h and image_w must be positive multiples of 32")
        if self.source == "directory" and not self.path:
            raise ValueError("data.path is required when source is 'directory'")
        return self


class RunConfig(_Strict):
    model: ModelConfig = Field(default_factory=ModelConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    data: DataConfig = Field(default_factory=DataConfig)

    def to_json(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def parse_config(payload: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(payload)
