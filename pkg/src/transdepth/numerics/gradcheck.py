"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from transdepth.errors import DomainError, NonFiniteError
from transdepth.numerics.tensor import Tensor, no_grad, record_branches


@dataclass
class GradReport:
    max_rel_error: float
    max_abs_error: float
    per_parameter: list[tuple[str, float]] = field(default_factory=list)
    tol: float | None = None
    skipped: int = 0
    unresolved: int = 0
    unresolved_max_abs: float = 0.0

    @property
    def passed(self) -> bool:
        return self.tol is None or self.max_rel_error < self.tol

    @property
    def worst(self) -> tuple[str, float]:
        if not self.per_parameter:
            return ("", 0.0)
        return max(self.per_parameter, key=lambda item: item[1])


def _traced(f: Callable[[], Tensor]) -> tuple[float, list[bytes]]:
    with record_branches() as branches:
        value = _evaluate(f)
    return value, branches


def _evaluate(f: Callable[[], Tensor]) -> float:
    try:
        value = f()
    except NonFiniteError as exc:
        raise DomainError(f"grad_check: non-finite evaluation ({exc})") from exc
    result = value.item() if isinstance(value, Tensor) else float(value)
    if not np.isfinite(result):
        raise DomainError("grad_check: non-finite evaluation")
    return result


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    tol: float | None = None,
    max_coords: int | None = None,
    seed: int = 0,
    resolve: float | None = None,
) -> GradReport:
    """Compare reverse-mode gradients of scalar ``f()`` against central differences.

    ``f`` closes over the tensors in ``params``; coordinates are perturbed in
    place and restored. Relative error per coordinate uses the denominator
    ``max(|analytic|, |numeric|, 1e-8)``. With ``max_coords`` set, at most that
    many coordinates per parameter are checked, drawn without replacement from
    a seeded generator.

    Coordinates whose perturbed evaluations select a different branch of a
    piecewise op (relu, clip, clamped sqrt, normalization floor) than the
    unperturbed point straddle a kink, where central differences do not
    estimate the derivative. They are left out and counted in ``skipped``.

    With ``resolve`` set, each coordinate is also differenced at ``2 * eps``.
    If the two estimates disagree by more than ``resolve`` relative, rounding
    noise dominates the difference quotient and the coordinate's derivative is
    below what float64 differencing can resolve. Such coordinates are counted
    in ``unresolved`` with their worst absolute error, not in the relative
    maximum. The same applies when the analytic value and both estimates sit
    below a few rounding quanta of ``f`` per step, where any error is too small
    to measure. A wrong analytic gradient on a resolvable coordinate is still
    reported.
    """
    for p in params.values():
        p.zero_grad()
    with record_branches() as base_branches:
        out = f()
    if out.size != 1:
        raise DomainError("grad_check: f must return a scalar")
    _evaluate(lambda: out)
    out.backward()
    quantum = 8.0 * float(np.spacing(abs(float(out.data.reshape(-1)[0])))) / eps

    rng = np.random.Generator(np.random.Philox(seed))
    max_rel = 0.0
    max_abs = 0.0
    per_parameter: list[tuple[str, float]] = []
    skipped = 0
    unresolved = 0
    unresolved_abs = 0.0
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for idx in coords:
            original = flat[idx]
            try:
                with no_grad():
                    flat[idx] = original + eps
                    f_plus, plus_branches = _traced(f)
                    flat[idx] = original - eps
                    f_minus, minus_branches = _traced(f)
            finally:
                flat[idx] = original
            if plus_branches != base_branches or minus_branches != base_branches:
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic.reshape(-1)[idx]
            abs_err = float(abs(a - numeric))
            if resolve is not None:
                wide = _wide_difference(f, flat, idx, eps, base_branches)
                if wide is None:
                    skipped += 1
                    continue
                noisy = abs(wide - numeric) > resolve * max(abs(wide), abs(numeric), 1e-8)
                if noisy or 0.0 < max(abs(float(a)), abs(wide), abs(numeric)) < quantum:
                    unresolved += 1
                    unresolved_abs = max(unresolved_abs, abs_err)
                    continue
            rel_err = abs_err / max(abs(float(a)), abs(numeric), 1e-8)
            worst = max(worst, rel_err)
            max_abs = max(max_abs, abs_err)
        per_parameter.append((name, worst))
        max_rel = max(max_rel, worst)
    return GradReport(max_rel_error=max_rel, max_abs_error=max_abs, per_parameter=per_parameter, tol=tol,
                      skipped=skipped, unresolved=unresolved, unresolved_max_abs=unresolved_abs)


def _wide_difference(f, flat: np.ndarray, idx: int, eps: float, base_branches) -> float | None:
    """Central difference at ``2 * eps``; None when the wider step crosses a kink."""
    original = flat[idx]
    try:
        with no_grad():
            flat[idx] = original + 2.0 * eps
            f_plus, plus_branches = _traced(f)
            flat[idx] = original - 2.0 * eps
            f_minus, minus_branches = _traced(f)
    finally:
        flat[idx] = original
    if plus_branches != base_branches or minus_branches != base_branches:
        return None
    return (f_plus - f_minus) / (4.0 * eps)
