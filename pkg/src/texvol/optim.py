"""Adam with bias correction, operating in place on a ParamStore."""
from __future__ import annotations

import numpy as np

from .autodiff import ParamStore


class NanGradient(RuntimeError):
    def __init__(self, block: str):
        super().__init__(f"non-finite gradient in parameter block {block!r}")
        self.block = block


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              skip: "set[str] | None" = None) -> None:
    """One bias-corrected Adam update; gradients are cleared afterward.

    Blocks named in ``skip`` are left untouched (weights, moments and
    gradients alike). A non-finite gradient aborts before any block is
    modified, naming the offender.
    """
    active = [n for n in store.blocks if skip is None or n not in skip]
    for name in active:
        if not np.all(np.isfinite(store.grads[name])):
            raise NanGradient(name)
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in active:
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        store.blocks[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g[...] = 0.0


def lr_exp_decay(step: int, total: int, lr0: float = 5e-4, lr1: float = 5e-5) -> float:
    """Exponential interpolation lr0 -> lr1 over ``total`` steps."""
    if total <= 0:
        return lr0
    f = min(max(step / total, 0.0), 1.0)
    return float(lr0 * (lr1 / lr0) ** f)
