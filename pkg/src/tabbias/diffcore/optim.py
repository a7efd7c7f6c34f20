"""Loss/gradient evaluation, Adam, and a finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping

import numpy as np

from . import autodiff as ad
from .params import ParamSet, ShapeMismatchError

LossFn = Callable[[Mapping[str, ad.Tensor], Any], ad.Tensor]


class NonFiniteLossError(FloatingPointError):
    """Raised when a loss evaluates to nan or inf."""


def loss_and_grad(loss_fn: LossFn, params: ParamSet, batch) -> tuple[float, ParamSet]:
    """Evaluate ``loss_fn(tensors, batch)`` and its exact reverse-mode gradient."""
    tensors = params.tensors(requires_grad=True)
    loss = loss_fn(tensors, batch)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss is not finite: {value}")
    grads = ad.grad(loss, tensors.values())
    return value, params.like_tensors(dict(zip(tensors, grads)))


def loss_value(loss_fn: LossFn, params: ParamSet, batch) -> float:
    with ad.no_grad():
        tensors = params.tensors(requires_grad=False)
        return float(loss_fn(tensors, batch).data)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ParamSet, **hyper) -> AdamState:
        n = len(params)
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)


def adam_step(
    state: AdamState, params: ParamSet, grad: ParamSet
) -> tuple[ParamSet, AdamState]:
    if not params.compatible(grad) or state.m.size != len(params):
        raise ShapeMismatchError("Adam state, params and gradient must share a shape")
    g = grad.flat
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.with_flat(new), replace(state, m=m, v=v, t=t)


@dataclass
class GradCheckReport:
    indices: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    tolerance: float
    flagged: list[int] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_errors.max()) if self.rel_errors.size else 0.0

    @property
    def ok(self) -> bool:
        return not self.flagged


def grad_check(
    loss_fn: LossFn,
    params: ParamSet,
    batch,
    tolerance: float = 1e-3,
    n_coords: int = 20,
    seed: int = 0,
    h: float = 1e-4,
    analytic: ParamSet | None = None,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare a gradient against central differences on random coordinates.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; a coordinate is
    flagged unless its error is strictly below ``tolerance``. Pass
    ``analytic`` to check a gradient produced elsewhere.
    """
    if analytic is None:
        _, analytic = loss_and_grad(loss_fn, params, batch)
    rng = np.random.default_rng(seed)
    n = len(params)
    idx = np.sort(rng.choice(n, size=min(n_coords, n), replace=False))
    numeric = np.empty(idx.size)
    for j, i in enumerate(idx):
        up = params.flat.copy()
        up[i] += h
        down = params.flat.copy()
        down[i] -= h
        numeric[j] = (
            loss_value(loss_fn, params.with_flat(up), batch)
            - loss_value(loss_fn, params.with_flat(down), batch)
        ) / (2.0 * h)
    a = analytic.flat[idx]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    rel = np.abs(a - numeric) / denom
    flagged = [int(i) for i, e in zip(idx, rel) if not e < tolerance]
    return GradCheckReport(idx, a, numeric, rel, tolerance, flagged)
