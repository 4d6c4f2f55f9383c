"""Fixed-seed gradient-check suites, one per scope."""

from __future__ import annotations

from typing import Callable

import numpy as np

from transdepth.agd import AttentionGateDecoder
from transdepth.backbone import FeaturePyramid
from transdepth.config import ModelConfig
from transdepth.losses import DepthPair, angular_loss, silog_loss
from transdepth.model import TransDepth
from transdepth.numerics import ops
from transdepth.numerics.gradcheck import GradReport, grad_check
from transdepth.numerics.tensor import Tensor
from transdepth.transformer import HybridEncoder

SCOPES = ("ops", "encoder", "agd", "losses", "full")
TOLERANCES = {"ops": 1e-6, "encoder": 1e-5, "agd": 1e-5, "losses": 1e-6, "full": 1e-5}
EPS = 1e-5


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _leaf(rng, shape, low=None, high=None, scale=1.0) -> Tensor:
    data = rng.normal(scale=scale, size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


def _signed_unit(rng, shape) -> np.ndarray:
    """Magnitudes in [0.5, 1.5] with random signs: random, but never near zero."""
    return rng.uniform(0.5, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def centered_objective(fn: Callable[[], Tensor | list[Tensor]], weights) -> Callable[[], Tensor]:
    """Scalar ``sum_k <out_k - out_k(now), w_k>`` for finite-difference checks.

    Centering on the unperturbed outputs leaves the gradient unchanged but keeps
    the value near zero, so entries a perturbation does not touch cancel
    exactly instead of adding rounding noise of order ``|f|`` to the quotient.
    """
    def as_list(out):
        return list(out) if isinstance(out, (list, tuple)) else [out]

    base = [o.data.copy() for o in as_list(fn())]
    weights = as_list(weights)

    def f() -> Tensor:
        terms = [((o - b) * w).sum() for o, b, w in zip(as_list(fn()), base, weights)]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total

    return f


def op_cases(seed: int) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    """One scalar test function per operation, with its leaves, for a given seed."""
    rng = _rng(seed)
    cases = {}

    def add_case(name, fn, leaves):
        out_shape = fn().shape
        cases[name] = (centered_objective(fn, _signed_unit(rng, out_shape)), leaves)

    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    add_case("matmul", lambda: ops.matmul(a, b), {"a": a, "b": b})
    ab, bb = _leaf(rng, (2, 3, 4)), _leaf(rng, (4, 3))
    add_case("matmul_batched", lambda: ops.matmul(ab, bb), {"a": ab, "b": bb})
    x = _leaf(rng, (3, 5))
    add_case("softmax_last", lambda: ops.softmax_last(x), {"x": x})
    # wide slices keep the finite-difference truncation error (which grows as 1/var) small
    xl, bet = _leaf(rng, (2, 3, 6), scale=3.0), _leaf(rng, (6,))
    gam = Tensor(_signed_unit(rng, (6,)), requires_grad=True)
    add_case("layer_norm", lambda: ops.layer_norm(xl, gam, bet), {"x": xl, "gamma": gam, "beta": bet})
    for k, stride in ((1, 1), (3, 1), (3, 2), (1, 2)):
        # output rounding grows with |x| |w| while each gradient grows with only one factor
        xc, wc, bc = _leaf(rng, (2, 3, 6, 6), scale=0.5), _leaf(rng, (4, 3, k, k), scale=0.5), _leaf(rng, (4,), scale=0.5)
        add_case(f"conv2d_k{k}s{stride}", lambda xc=xc, wc=wc, bc=bc, k=k, stride=stride: ops.conv2d(
            xc, wc, bc, stride=stride, pad=k // 2), {"x": xc, "w": wc, "b": bc})
    p, q = _leaf(rng, (3, 2, 4)), _leaf(rng, (3, 1, 1))
    add_case("add_broadcast", lambda: ops.add(p, q), {"a": p, "b": q})
    add_case("mul_broadcast", lambda: ops.mul(p, q), {"a": p, "b": q})
    num, den = _leaf(rng, (3, 4)), _leaf(rng, (3, 4), 0.5, 2.0)
    add_case("div", lambda: ops.div(num, den), {"a": num, "b": den})
    u = _leaf(rng, (4, 5))
    add_case("sigmoid", lambda: ops.sigmoid(u), {"x": u})
    add_case("relu", lambda: ops.relu(u), {"x": u})
    add_case("gelu", lambda: ops.gelu(u), {"x": u})
    add_case("exp", lambda: ops.exp(u), {"x": u})
    pos = _leaf(rng, (4, 5), 0.2, 3.0)
    add_case("log", lambda: ops.log(pos), {"x": pos})
    add_case("sqrt_scalar", lambda: ops.sqrt_scalar(pos), {"x": pos})
    c = _leaf(rng, (4, 5), -0.9, 0.9)
    add_case("arccos", lambda: ops.arccos(c), {"x": c})
    img = _leaf(rng, (2, 2, 3, 4))
    add_case("bilinear_up", lambda: ops.bilinear_resize(img, 6, 7), {"x": img})
    add_case("bilinear_down", lambda: ops.bilinear_resize(img, 2, 2), {"x": img})
    add_case("global_avg_pool", lambda: ops.global_avg_pool(img), {"x": img})
    vec = _leaf(rng, (2, 3, 2, 2))
    add_case("l2_normalize", lambda: ops.l2_normalize(vec, axis=1), {"x": vec})
    s1, s2 = _leaf(rng, (2, 3)), _leaf(rng, (2, 2))
    add_case("concat", lambda: ops.concat([s1, s2], axis=1), {"a": s1, "b": s2})
    add_case("reshape_transpose", lambda: ops.transpose(ops.reshape(img, (4, 3, 4)), (2, 0, 1)), {"x": img})
    mask = rng.uniform(size=img.shape) > 0.4
    add_case("masked_select", lambda: ops.masked_select(img, mask), {"x": img})
    add_case("sum_mean", lambda: ops.mean(ops.sum(img, axis=(1, 3), keepdims=True) * img, axis=2), {"x": img})
    return cases


def _merge(reports: list[tuple[str, GradReport]], tol: float) -> GradReport:
    per = [(f"{prefix}.{name}", err) for prefix, rep in reports for name, err in rep.per_parameter]
    return GradReport(
        max_rel_error=max((r.max_rel_error for _, r in reports), default=0.0),
        max_abs_error=max((r.max_abs_error for _, r in reports), default=0.0),
        per_parameter=per,
        tol=tol,
        skipped=sum(r.skipped for _, r in reports),
        unresolved=sum(r.unresolved for _, r in reports),
        unresolved_max_abs=max((r.unresolved_max_abs for _, r in reports), default=0.0),
    )


def check_ops(seeds=range(3)) -> GradReport:
    reports = []
    for seed in seeds:
        for name, (fn, leaves) in op_cases(seed).items():
            reports.append((f"{name}[{seed}]", grad_check(fn, leaves, eps=EPS)))
    return _merge(reports, TOLERANCES["ops"])


def toy_model_config(**overrides) -> ModelConfig:
    return ModelConfig.model_validate(overrides)


def check_encoder(seed: int = 0, max_coords: int = 3) -> GradReport:
    cfg = toy_model_config()
    enc = HybridEncoder(cfg.backbone, cfg.transformer).initialize(seed)
    rng = _rng(seed + 1)
    image = rng.uniform(size=(1, 3, 32, 32))
    weights = [rng.normal(size=s) for s in enc(image).shapes]

    f = centered_objective(lambda: enc(image).levels, weights)
    report = grad_check(f, dict(enc.named_parameters()), eps=EPS, max_coords=max_coords, seed=seed)
    report.tol = TOLERANCES["encoder"]
    return report


def check_agd(seed: int = 0, max_coords: int = 4) -> GradReport:
    cfg = toy_model_config()
    dec = AttentionGateDecoder(cfg.backbone, cfg.agd).initialize(seed)
    rng = _rng(seed + 1)
    # pyramid of a 64x64 image: receiving grid f5 is 2x2
    levels = [Tensor(rng.normal(size=(1, c, 64 >> s, 64 >> s)), requires_grad=True)
              for s, c in enumerate(cfg.backbone.stage_channels, start=1)]
    pyramid = FeaturePyramid(levels)
    weights = rng.normal(size=dec(pyramid).shape)
    params = dict(dec.named_parameters())
    params.update({f"f{s}": levels[s - 1] for s in cfg.agd.emitting_scales})
    f = centered_objective(lambda: dec(pyramid), weights)
    report = grad_check(f, params, eps=EPS, max_coords=max_coords, seed=seed)
    report.tol = TOLERANCES["agd"]
    return report


def check_losses(seeds=range(3)) -> GradReport:
    reports = []
    for seed in seeds:
        rng = _rng(seed)
        pred = Tensor(rng.uniform(0.5, 5.0, size=(2, 1, 3, 4)), requires_grad=True)
        gt = rng.uniform(0.5, 5.0, size=(2, 1, 3, 4))
        mask = rng.uniform(size=gt.shape) > 0.2
        reports.append((f"silog[{seed}]", grad_check(lambda: silog_loss(DepthPair(pred, gt, mask)), {"pred": pred})))
        raw = Tensor(rng.normal(size=(1, 3, 3, 3)), requires_grad=True)
        target = rng.normal(size=(1, 3, 3, 3))
        target /= np.linalg.norm(target, axis=1, keepdims=True)
        reports.append((f"angular[{seed}]", grad_check(
            lambda: angular_loss(ops.l2_normalize(raw, axis=1), target), {"pred": raw})))
    return _merge(reports, TOLERANCES["losses"])


def check_full(seed: int = 0, max_coords: int = 3, task: str = "depth") -> GradReport:
    cfg = toy_model_config(task=task)
    model = TransDepth(cfg, seed=seed)
    rng = _rng(seed + 1)
    image = rng.uniform(size=(1, 3, 32, 32))
    if task == "depth":
        target = rng.uniform(1.0, 8.0, size=(1, 1, 32, 32))
    else:
        target = rng.normal(size=(1, 3, 32, 32))
        target /= np.linalg.norm(target, axis=1, keepdims=True)
    report = grad_check(lambda: model.loss(model(image), target), dict(model.named_parameters()),
                        eps=EPS, max_coords=max_coords, seed=seed, resolve=0.5 * TOLERANCES["full"])
    report.tol = TOLERANCES["full"]
    return report


def gradcheck_cmd(scope: str) -> GradReport:
    runners = {"ops": check_ops, "encoder": check_encoder, "agd": check_agd, "losses": check_losses,
               "full": check_full}
    if scope not in runners:
        raise ValueError(f"unknown gradcheck scope {scope!r}; choose from {', '.join(SCOPES)}")
    return runners[scope]()
