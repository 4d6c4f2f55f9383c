import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bilinear_ref, conv2d_ref, softmax_ref
from transdepth.errors import DimensionError, DomainError, NonFiniteError
from transdepth.gradcheck_suite import op_cases
from transdepth.numerics import Tensor, grad_check, no_grad, ops

SEEDS = range(100)


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


# -- matmul ---------------------------------------------------------------


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ops.matmul(np.eye(2), a).data, a)


def test_matmul_hand_product():
    out = ops.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_zero_annihilates():
    assert not ops.matmul(rng(0).normal(size=(3, 4)), np.zeros((4, 2))).data.any()


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))


# -- softmax ----------------------------------------------------------------


def test_softmax_uniform_and_analytic():
    assert np.allclose(ops.softmax_last([0.0, 0.0, 0.0]).data, 1 / 3, atol=1e-15)
    assert np.allclose(ops.softmax_last([0.0, math.log(2.0)]).data, [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_empty_axis():
    with pytest.raises(DimensionError):
        ops.softmax_last(np.zeros((2, 0)))


def test_softmax_large_logits_stay_finite():
    out = ops.softmax_last([1000.0, 0.0])
    assert np.allclose(out.data, [1.0, 0.0])


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_normalized_and_shift_invariant(seed):
    r = rng(seed)
    x = r.normal(scale=3.0, size=(4, 7))
    c = r.normal(scale=10.0)
    p = ops.softmax_last(x).data
    assert np.all(p >= 0)
    assert np.max(np.abs(p.sum(axis=-1) - 1.0)) <= 1e-12
    assert np.max(np.abs(ops.softmax_last(x + c).data - p)) <= 1e-12
    assert np.allclose(p[0], softmax_ref(list(x[0])), atol=1e-15)


# -- layer norm ---------------------------------------------------------------


def test_layer_norm_examples():
    ones, zeros = np.ones(3), np.zeros(3)
    assert not ops.layer_norm(np.full((1, 3), 2.5), ones, zeros).data.any()
    out = ops.layer_norm([[1.0, -1.0]], np.ones(2), np.zeros(2)).data
    assert np.allclose(out, [[1 / math.sqrt(1 + 1e-5), -1 / math.sqrt(1 + 1e-5)]], atol=1e-15)
    beta = np.array([0.5, -2.0, 3.0])
    assert np.array_equal(ops.layer_norm(rng(1).normal(size=(2, 3)), zeros, beta).data, np.tile(beta, (2, 1)))


def test_layer_norm_empty_channels():
    with pytest.raises(DimensionError):
        ops.layer_norm(np.zeros((2, 0)), np.zeros(0), np.zeros(0))


# -- conv2d ---------------------------------------------------------------


def test_conv_delta_kernel_is_identity():
    x = rng(2).normal(size=(2, 3, 5, 6))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    assert np.array_equal(ops.conv2d(x, w, pad=1).data, x)


def test_conv_ones_kernel_on_constant():
    out = ops.conv2d(np.full((1, 1, 4, 4), 2.0), np.ones((1, 1, 3, 3)), pad=1).data[0, 0]
    assert out[1, 1] == 18.0 and out[2, 2] == 18.0
    assert out[0, 0] == out[0, 3] == out[3, 0] == out[3, 3] == 8.0


def test_conv_1x1_is_channel_map():
    r = rng(3)
    x, w = r.normal(size=(1, 3, 2, 2)), r.normal(size=(4, 3, 1, 1))
    expected = np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x)
    assert np.allclose(ops.conv2d(x, w).data, expected, atol=1e-14)


@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2), (5, 1), (5, 2)])
def test_conv_matches_loop_oracle(k, stride):
    r = rng(10 * k + stride)
    x, w, b = r.normal(size=(2, 2, 7, 6)), r.normal(size=(3, 2, k, k)), r.normal(size=3)
    got = ops.conv2d(x, w, b, stride=stride, pad=k // 2).data
    assert np.allclose(got, conv2d_ref(x, w, b, stride, k // 2), atol=1e-12)


def test_conv_even_kernel_rejected():
    with pytest.raises(DimensionError):
        ops.conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)))


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 1, 1)))


# -- elementwise ----------------------------------------------------------------


def test_elementwise_examples():
    assert ops.elementwise("sigmoid", 0.0).item() == 0.5
    x = rng(4).normal(size=(2, 3))
    assert np.array_equal(ops.elementwise("mul", x, np.ones((2, 3))).data, x)
    a = np.zeros((2, 3, 4))
    b = np.arange(2.0).reshape(2, 1, 1)
    out = ops.elementwise("add", a, b).data
    assert np.array_equal(out[0], np.zeros((3, 4))) and np.array_equal(out[1], np.ones((3, 4)))


def test_elementwise_errors():
    with pytest.raises(DomainError):
        ops.elementwise("log", [1.0, 0.0])
    with pytest.raises(DimensionError):
        ops.elementwise("add", np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        ops.elementwise("tan", 1.0)


def test_sqrt_scalar_clamps_with_zero_gradient():
    x = Tensor([-1e-18, 4.0], requires_grad=True)
    y = ops.sqrt_scalar(x)
    y.sum().backward()
    assert np.array_equal(y.data, [0.0, 2.0])
    assert np.array_equal(x.grad, [0.0, 0.25])


def test_relu_gradient_at_zero_is_zero():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    ops.relu(x).sum().backward()
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


def test_non_finite_is_a_hard_error():
    with pytest.raises(NonFiniteError):
        ops.exp([1000.0])
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_division_by_zero():
    with pytest.raises(DomainError):
        ops.div(1.0, [0.0, 1.0])


# -- bilinear resize --------------------------------------------------------------


def test_resize_same_size_is_identity():
    x = rng(5).normal(size=(1, 2, 3, 5))
    assert np.array_equal(ops.bilinear_resize(x, 3, 5).data, x)


def test_resize_1d_example():
    out = ops.bilinear_resize(np.array([0.0, 1.0]).reshape(1, 1, 1, 2), 1, 4).data
    assert np.allclose(out.reshape(-1), [0.0, 0.25, 0.75, 1.0], atol=1e-15)


@pytest.mark.parametrize("shape", [(3, 4, 6, 7), (4, 4, 2, 2), (2, 5, 1, 9), (5, 3, 5, 3)])
def test_resize_matches_loop_oracle(shape):
    h, w, oh, ow = shape
    x = rng(sum(shape)).normal(size=(1, 2, h, w))
    assert np.allclose(ops.bilinear_resize(x, oh, ow).data, bilinear_ref(x, oh, ow), atol=1e-13)


@pytest.mark.parametrize("seed", SEEDS)
def test_resize_preserves_constants_and_interior_ramps(seed):
    r = rng(seed)
    h, w = r.integers(1, 6, size=2)
    oh, ow = r.integers(1, 12, size=2)
    c = r.normal()
    const = ops.bilinear_resize(np.full((1, 1, h, w), c), oh, ow).data
    assert np.all(const == c)
    # affine ramp along width, upsampled: interior output points are exact
    a, b = r.normal(size=2)
    src = np.broadcast_to(a * np.arange(w) + b, (1, 1, h, w))
    big = 2 * w + 1
    out = ops.bilinear_resize(src, h, big).data[0, 0, 0]
    s = (np.arange(big) + 0.5) * w / big - 0.5
    interior = (s >= 0) & (s <= w - 1)
    assert np.allclose(out[interior], a * s[interior] + b, atol=1e-12)


# -- pooling ----------------------------------------------------------------------


def test_global_avg_pool_examples():
    assert ops.global_avg_pool(np.full((1, 1, 3, 3), 4.0)).item() == 4.0
    assert ops.global_avg_pool(np.full((1, 1, 1, 1), -2.0)).item() == -2.0
    assert ops.global_avg_pool(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2)).item() == 2.5


# -- autodiff plumbing -------------------------------------------------------------


def test_gradient_accumulates_over_shared_use():
    x = Tensor([3.0], requires_grad=True)
    (x * x + x).sum().backward()
    assert x.grad[0] == 7.0


def test_no_grad_builds_no_graph():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_backward_needs_scalar_seed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(DimensionError):
        (x * 2.0).backward()


def test_ops_are_deterministic():
    x = rng(6).normal(size=(2, 3, 8, 8))
    w = rng(7).normal(size=(4, 3, 3, 3))
    a = ops.bilinear_resize(ops.conv2d(x, w, pad=1, stride=2), 5, 5).data
    b = ops.bilinear_resize(ops.conv2d(x, w, pad=1, stride=2), 5, 5).data
    assert a.tobytes() == b.tobytes()


# -- grad_check --------------------------------------------------------------------


def test_grad_check_square():
    x = Tensor([3.0], requires_grad=True)
    report = grad_check(lambda: (x * x).sum(), {"x": x})
    assert x.grad[0] == 6.0
    assert report.max_rel_error < 1e-9


def test_grad_check_softmax_projection():
    x = Tensor(rng(8).normal(size=5), requires_grad=True)
    w = rng(9).normal(size=5)
    assert grad_check(lambda: (ops.softmax_last(x) * w).sum(), {"x": x}).max_rel_error < 1e-6


def test_grad_check_constant():
    x = Tensor([1.0, 2.0], requires_grad=True)
    report = grad_check(lambda: (x * 0.0).sum() + 5.0, {"x": x})
    assert report.max_rel_error == 0.0 and report.max_abs_error == 0.0


def test_grad_check_catches_wrong_backward():
    x = Tensor([0.3, -1.2], requires_grad=True)

    def bad_square():
        return Tensor._result(x.data**2, (x,), lambda g: (g * x.data,), "bad_square").sum()

    report = grad_check(bad_square, {"x": x}, tol=1e-6)
    assert not report.passed
    assert report.worst[0] == "x"


def test_resolve_guard_still_catches_wrong_backward():
    x = Tensor([0.3, -1.2], requires_grad=True)

    def bad_square():
        return Tensor._result(x.data**2, (x,), lambda g: (g * x.data,), "bad_square").sum()

    report = grad_check(bad_square, {"x": x}, tol=1e-5, resolve=5e-6)
    assert report.unresolved == 0
    assert not report.passed


def test_resolve_guard_sets_aside_rounding_dominated_coordinates():
    # a 1e-12 slope on top of an O(1) constant is below float64 differencing resolution
    x = Tensor([0.4, 0.7], requires_grad=True)
    scale = Tensor(np.array([1e-12, 1.0]))

    def f():
        return (x * scale).sum() + 3.7

    report = grad_check(f, {"x": x}, tol=1e-5, resolve=5e-6)
    assert report.unresolved == 1
    assert report.unresolved_max_abs < 1e-9
    assert report.passed


def test_grad_check_non_finite_is_domain_error():
    x = Tensor([1e-6], requires_grad=True)
    with pytest.raises(DomainError):
        grad_check(lambda: ops.log(x).sum(), {"x": x}, eps=1e-5)


def test_grad_check_skips_kink_straddling_coordinates():
    x = Tensor([3e-6, 0.5], requires_grad=True)
    report = grad_check(lambda: ops.relu(x).sum(), {"x": x}, eps=1e-5)
    assert report.skipped == 1
    assert report.max_rel_error < 1e-9


@pytest.mark.parametrize("seed", SEEDS)
def test_every_op_gradient_matches_finite_differences(seed):
    for name, (fn, leaves) in op_cases(seed).items():
        report = grad_check(fn, leaves, eps=1e-5)
        assert report.max_rel_error < 1e-6, (name, report.worst)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_property(values, shift):
    p = ops.softmax_last(values).data
    q = ops.softmax_last(np.array(values) + shift).data
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.max(np.abs(p - q)) <= 1e-12
