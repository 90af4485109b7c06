"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Iterable, Tuple

import numpy as np

from dualmem import tensor as T
from dualmem.tensor import Tensor


def analytic(loss_fn: Callable[[], Tensor], params: Iterable[Tensor]):
    params = list(params)
    with T.GradientTape() as tape:
        out = loss_fn()
    grads = tape.backward(out)
    return [grads.of(p).copy() for p in params]


def numeric(loss_fn: Callable[[], Tensor], p: Tensor, idx: Tuple[int, ...], eps: float) -> float:
    orig = p.data[idx]
    p.data[idx] = orig + eps
    hi = loss_fn().item()
    p.data[idx] = orig - eps
    lo = loss_fn().item()
    p.data[idx] = orig
    return (hi - lo) / (2.0 * eps)


def max_relative_error(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-6,
    samples: int = 6,
    seed: int = 0,
) -> float:
    """Worst relative error over ``samples`` random entries of every parameter.

    Errors are relative to the gradient vector's scale per parameter so
    entries that are exactly zero do not blow the ratio up.
    """
    params = list(params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, analytic(loss_fn, params)):
        flat = rng.choice(p.size, size=min(samples, p.size), replace=False)
        idxs = [np.unravel_index(int(i), p.shape) for i in flat]
        num = np.array([numeric(loss_fn, p, idx, eps) for idx in idxs])
        ana = np.array([g[idx] for idx in idxs])
        denom = max(np.abs(ana).max(), np.abs(num).max(), 1e-8)
        worst = max(worst, float(np.abs(ana - num).max() / denom))
    return worst
