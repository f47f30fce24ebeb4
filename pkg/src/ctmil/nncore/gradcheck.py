"""Central finite-difference gradients, the oracle for analytic backprop.

``finite_diff_grad`` perturbs every coordinate; for large tensors
``finite_diff_grad_sampled`` checks a random coordinate subset, which is
how the acceptance suite keeps encoder-sized checks tractable.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

LossFn = Callable[[dict[str, np.ndarray]], float]


def finite_diff_grad(loss_fn: LossFn, params: dict[str, np.ndarray],
                     epsilon: float = 1e-5) -> dict[str, np.ndarray]:
    """(L(p + eps) - L(p - eps)) / (2 eps), coordinate by coordinate."""
    grads = {}
    work = {k: v.copy() for k, v in params.items()}
    for name, p in work.items():
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = loss_fn(work)
            flat[i] = orig - epsilon
            lm = loss_fn(work)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * epsilon)
        grads[name] = g.astype(p.dtype)
    return grads


def finite_diff_grad_sampled(loss_fn: LossFn, params: dict[str, np.ndarray],
                             epsilon: float, rng: np.random.Generator,
                             coords_per_tensor: int,
                             ) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Numeric gradient at a random coordinate subset of each tensor.

    Returns name -> (flat indices, gradient values at those indices).
    """
    out = {}
    work = {k: v.copy() for k, v in params.items()}
    for name, p in work.items():
        flat = p.reshape(-1)
        n = min(coords_per_tensor, flat.size)
        idx = rng.choice(flat.size, size=n, replace=False)
        vals = np.zeros(n, dtype=np.float64)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + epsilon
            lp = loss_fn(work)
            flat[i] = orig - epsilon
            lm = loss_fn(work)
            flat[i] = orig
            vals[j] = (lp - lm) / (2.0 * epsilon)
        out[name] = (idx, vals)
    return out


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0
