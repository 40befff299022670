"""Compare reverse-mode gradients with central finite differences."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_coords: int | None = 40,
    seed: int = 0,
    floor: float = 1e-5,
) -> float:
    """Maximum relative error between analytic and numeric gradients.

    ``f`` takes no arguments and must read ``params`` (float64 tensors with
    ``requires_grad``) to produce a scalar. At most ``max_coords`` coordinates
    per parameter are probed, chosen by a seeded generator. The relative
    error of one coordinate is |a - n| / max(|a|, |n|, floor); the floor
    keeps gradients that are zero by symmetry (where the numeric estimate is
    pure rounding noise) from dominating the maximum.
    """
    for p in params:
        if p.dtype != np.float64:
            raise ValueError("grad_check requires float64 parameters")
    out = f()
    if out.size != 1:
        raise ValueError("f must return a scalar")
    if f().item() != out.item():
        raise ValueError("f is not deterministic (dropout left in training mode?)")
    for p in params:
        p.zero_grad()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = ga.reshape(-1)[i]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst
