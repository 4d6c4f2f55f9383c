"""Minimal float64 tensor with reverse-mode gradients."""

from transdepth.numerics import ops
from transdepth.numerics.gradcheck import GradReport, grad_check
from transdepth.numerics.ops import (
    bilinear_resize,
    concat,
    conv2d,
    elementwise,
    global_avg_pool,
    layer_norm,
    matmul,
    softmax_last,
)
from transdepth.numerics.tensor import Tensor, as_tensor, is_grad_enabled, no_grad

__all__ = [
    "GradReport", "Tensor", "as_tensor", "bilinear_resize", "concat", "conv2d",
    "elementwise", "global_avg_pool", "grad_check", "is_grad_enabled", "layer_norm",
    "matmul", "no_grad", "ops", "softmax_last",
]
