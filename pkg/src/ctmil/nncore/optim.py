"""SGD-with-momentum and Adam updates over named tensor dicts.

Weight decay is classic L2, added to the gradient before the update.
Tensors whose name ends in ".b" (biases) are not decayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, TrainingError

RULES = ("sgd_momentum", "adam")


@dataclass
class OptimState:
    rule: str
    lr: float
    weight_decay: float = 0.0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def make_optimizer(rule: str, params: dict[str, np.ndarray], lr: float,
                   weight_decay: float = 0.0, momentum: float = 0.9,
                   beta1: float = 0.9, beta2: float = 0.999) -> OptimState:
    if rule not in RULES:
        raise ConfigError(f"optimizer rule must be one of {RULES}, got {rule!r}")
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state = OptimState(rule=rule, lr=lr, weight_decay=weight_decay,
                       momentum=momentum, beta1=beta1, beta2=beta2)
    for name, p in params.items():
        if rule == "sgd_momentum":
            state.slots[name] = {"v": np.zeros_like(p)}
        else:
            state.slots[name] = {"m": np.zeros_like(p), "v": np.zeros_like(p)}
    return state


def _decayed(name: str, p: np.ndarray, g: np.ndarray, wd: float) -> np.ndarray:
    if not np.all(np.isfinite(g)):
        raise TrainingError(f"non-finite gradient for tensor {name!r}")
    if wd and not name.endswith(".b"):
        return g + wd * p
    return g


def sgd_momentum_step(params: dict[str, np.ndarray],
                      grads: dict[str, np.ndarray],
                      state: OptimState) -> dict[str, np.ndarray]:
    """v <- momentum*v + (g + wd*p); p <- p - lr*v. Updates in place."""
    state.step += 1
    for name, g in grads.items():
        p = params[name]
        g = _decayed(name, p, g, state.weight_decay)
        v = state.slots[name]["v"]
        v *= state.momentum
        v += g
        p -= state.lr * v
    return params


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: OptimState) -> dict[str, np.ndarray]:
    """Bias-corrected Adam. Updates in place; one shared step counter."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        g = _decayed(name, p, g, state.weight_decay)
        slot = state.slots[name]
        slot["m"] *= b1
        slot["m"] += (1.0 - b1) * g
        slot["v"] *= b2
        slot["v"] += (1.0 - b2) * (g * g)
        mhat = slot["m"] / bc1
        vhat = slot["v"] / bc2
        p -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params
