"""Dense float64 tensor with tape-free reverse-mode differentiation.

Every operation that produces a tensor from tensors records its parents and a
closure mapping the output cotangent to one cotangent per parent. ``backward``
walks the resulting DAG in reverse topological order.
"""

from __future__ import annotations

import hashlib
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from transdepth.errors import DimensionError, NonFiniteError

_state = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@contextmanager
def record_branches() -> Iterator[list[bytes]]:
    """Collect a digest of every branch mask taken by piecewise ops in this thread."""
    previous = getattr(_state, "branches", None)
    log: list[bytes] = []
    _state.branches = log
    try:
        yield log
    finally:
        _state.branches = previous


def note_branch(mask: np.ndarray) -> None:
    log = getattr(_state, "branches", None)
    if log is not None:
        log.append(hashlib.blake2b(np.packbits(mask).tobytes(), digest_size=16).digest())


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: produced non-finite values")


class Tensor:
    """n-dimensional float64 array with an optional accumulated gradient.

    ``data`` must not be mutated once the tensor participates in a graph;
    optimizers and the finite-difference checker are the only writers.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "Tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        data = np.asarray(data, dtype=np.float64)
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- autodiff --------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if not self.requires_grad:
            raise DimensionError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        else:
            seed = np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape).copy()

        order = self._topological_order()
        cotangents: dict[int, np.ndarray] = {id(self): seed}
        for node in order:
            g = cotangents.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                _check_finite(pg, f"backward of {node._op}")
                key = id(parent)
                if key in cotangents:
                    cotangents[key] = cotangents[key] + pg
                else:
                    cotangents[key] = pg

    def _topological_order(self) -> list["Tensor"]:
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        order.reverse()
        return order

    # -- operator sugar (implementations live in ops) ---------------------
    def __add__(self, other):
        from transdepth.numerics import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from transdepth.numerics import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from transdepth.numerics import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from transdepth.numerics import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from transdepth.numerics import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from transdepth.numerics import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from transdepth.numerics import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from transdepth.numerics import ops
        return ops.div(other, self)

    def __neg__(self):
        from transdepth.numerics import ops
        return ops.neg(self)

    def __pow__(self, exponent: float):
        from transdepth.numerics import ops
        return ops.power(self, exponent)

    def __matmul__(self, other):
        from transdepth.numerics import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from transdepth.numerics import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from transdepth.numerics import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from transdepth.numerics import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from transdepth.numerics import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from transdepth.numerics import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
