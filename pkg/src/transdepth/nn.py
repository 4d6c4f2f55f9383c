"""Parameter containers and the handful of layers the model is built from."""

from __future__ import annotations

import hashlib
import math
from typing import Iterator

import numpy as np

from transdepth.errors import DimensionError
from transdepth.numerics import ops
from transdepth.numerics.tensor import Tensor

# init rule: ("zeros",) | ("ones",) | ("normal", std)
InitRule = tuple


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator keyed by (seed, parameter name).

    Keying on the name keeps a parameter's initial value independent of which
    other modules exist, so config variants share every common parameter.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *words])))


def he_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


def xavier_std(fan_in: int, fan_out: int) -> float:
    return math.sqrt(2.0 / (fan_in + fan_out))


class Module:
    def __init__(self) -> None:
        self._inits: dict[str, InitRule] = {}

    def param(self, attr: str, shape: tuple[int, ...], init: InitRule) -> Tensor:
        t = Tensor(np.zeros(shape), requires_grad=True)
        setattr(self, attr, t)
        self._inits[attr] = init
        return t

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Tensor, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item
            elif isinstance(value, dict):
                for k, item in value.items():
                    if isinstance(item, Module):
                        yield f"{key}.{k}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in self._children():
            if isinstance(value, Tensor):
                if key in self._inits:
                    yield prefix + key, value
            else:
                yield from value.named_parameters(prefix + key + ".")

    def _named_rules(self, prefix: str = "") -> Iterator[tuple[str, Tensor, InitRule]]:
        for key, value in self._children():
            if isinstance(value, Tensor):
                if key in self._inits:
                    yield prefix + key, value, self._inits[key]
            else:
                yield from value._named_rules(prefix + key + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def initialize(self, seed: int) -> "Module":
        for name, p, rule in self._named_rules():
            kind = rule[0]
            if kind == "zeros":
                p.data = np.zeros(p.shape)
            elif kind == "ones":
                p.data = np.ones(p.shape)
            elif kind == "normal":
                p.data = param_rng(seed, name).normal(0.0, rule[1], size=p.shape)
            else:
                raise ValueError(f"unknown init rule {rule!r} for {name}")
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = own.keys() - state.keys()
        unexpected = state.keys() - own.keys()
        if missing or unexpected:
            raise DimensionError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 1, stride: int = 1, pad: int | None = None,
                 init: InitRule | None = None, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.param("weight", (c_out, c_in, k, k), init or ("normal", he_std(c_in * k * k)))
        self.bias = self.param("bias", (c_out,), ("zeros",)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class Linear(Module):
    """``x @ weight + bias`` with ``weight`` stored as ``in x out``."""

    def __init__(self, d_in: int, d_out: int, init: InitRule | None = None, bias: bool = True):
        super().__init__()
        self.param("weight", (d_in, d_out), init or ("normal", xavier_std(d_in, d_out)))
        self.bias = self.param("bias", (d_out,), ("zeros",)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, c: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.param("gamma", (c,), ("ones",))
        self.param("beta", (c,), ("zeros",))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)
