"""Forward-mode tangents layered over the reverse-mode tape.

A ``Jet`` carries a primal tape node plus one tangent node per probe
direction. Every jet operation is expressed in ordinary tape ops, so the
tangents themselves remain differentiable: after evaluating a field through
jets seeded with the world axes, the tangent outputs are the spatial
gradients of the field, and reverse mode through them yields parameter
gradients of quantities built from those spatial gradients.

Tangents that are identically zero are stored as ``None`` to keep the tape
short; they materialize lazily when mixed with live tangents.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tape, Var, as_var, concat, stack


class Jet:
    __slots__ = ("val", "tans")
    __array_ufunc__ = None

    def __init__(self, val: Var, tans: tuple):
        self.val = val
        self.tans = tuple(tans)

    @property
    def tape(self) -> Tape:
        return self.val.tape

    @property
    def shape(self):
        return self.val.shape

    def _zeros(self) -> Var:
        return self.tape.constant(np.zeros_like(self.val.value))

    def tangent(self, k: int) -> Var:
        t = self.tans[k]
        return t if t is not None else self._zeros()

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.val + other.val,
                       [_tadd(a, b) for a, b in zip(self.tans, other.tans)])
        return Jet(self.val + other, self.tans)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, [None if t is None else -t for t in self.tans])

    def __sub__(self, other):
        if isinstance(other, Jet):
            return Jet(self.val - other.val,
                       [_tadd(a, None if b is None else -b)
                        for a, b in zip(self.tans, other.tans)])
        return Jet(self.val - other, self.tans)

    def __rsub__(self, other):
        return Jet(other - self.val,
                   [None if t is None else -t for t in self.tans])

    def __mul__(self, other):
        if isinstance(other, Jet):
            tans = [_tadd(None if a is None else a * other.val,
                          None if b is None else self.val * b)
                    for a, b in zip(self.tans, other.tans)]
            return Jet(self.val * other.val, tans)
        # Var or constant: no tangent of its own here.
        return Jet(self.val * other,
                   [None if t is None else t * other for t in self.tans])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            inv = 1.0 / other.val
            val = self.val * inv
            tans = [_tadd(None if a is None else a * inv,
                          None if b is None else -val * inv * b)
                    for a, b in zip(self.tans, other.tans)]
            return Jet(val, tans)
        return Jet(self.val / other,
                   [None if t is None else t / other for t in self.tans])

    def __pow__(self, p):
        dv = p * self.val ** (p - 1)
        return Jet(self.val ** p,
                   [None if t is None else dv * t for t in self.tans])

    def __matmul__(self, other):
        # Weight matrices are Vars (or constants), never jets.
        w = other.val if isinstance(other, Jet) else other
        return Jet(self.val @ w,
                   [None if t is None else t @ w for t in self.tans])

    # -- elementwise primitives ---------------------------------------------

    def exp(self):
        val = self.val.exp()
        return Jet(val, [None if t is None else val * t for t in self.tans])

    def sin(self):
        c = self.val.cos()
        return Jet(self.val.sin(),
                   [None if t is None else c * t for t in self.tans])

    def cos(self):
        s = self.val.sin()
        return Jet(self.val.cos(),
                   [None if t is None else -s * t for t in self.tans])

    def sqrt(self):
        val = self.val.sqrt()
        half_inv = 0.5 / val
        return Jet(val, [None if t is None else half_inv * t for t in self.tans])

    def relu(self):
        mask = self.val.value > 0
        return Jet(self.val.relu(),
                   [None if t is None else t.gate(mask) for t in self.tans])

    def sigmoid(self):
        s = self.val.sigmoid()
        ds = s * (1.0 - s)
        return Jet(s, [None if t is None else ds * t for t in self.tans])

    def softplus(self):
        ds = self.val.sigmoid()
        return Jet(self.val.softplus(),
                   [None if t is None else ds * t for t in self.tans])

    def clamp(self, lo: float, hi: float):
        a = self.val.value
        mask = (a >= lo) & (a <= hi)
        return Jet(self.val.clamp(lo, hi),
                   [None if t is None else t.gate(mask) for t in self.tans])

    # -- reductions / shape --------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return Jet(self.val.sum(axis=axis, keepdims=keepdims),
                   [None if t is None else t.sum(axis=axis, keepdims=keepdims)
                    for t in self.tans])

    def cast(self, dtype):
        return Jet(self.val.cast(dtype),
                   [None if t is None else t.cast(dtype) for t in self.tans])

    def reshape(self, *shape):
        return Jet(self.val.reshape(*shape),
                   [None if t is None else t.reshape(*shape) for t in self.tans])

    def broadcast_to(self, shape):
        return Jet(self.val.broadcast_to(shape),
                   [None if t is None else t.broadcast_to(shape) for t in self.tans])

    def cols(self, j0: int, j1: int):
        return Jet(self.val.cols(j0, j1),
                   [None if t is None else t.cols(j0, j1) for t in self.tans])

    def col(self, j: int):
        return Jet(self.val.col(j),
                   [None if t is None else t.col(j) for t in self.tans])


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def lift(x, n_dirs: int) -> Jet:
    """Wrap a Var (or constant) as a jet with zero tangents."""
    return Jet(x, [None] * n_dirs)


def seed_points(tape: Tape, x: np.ndarray) -> Jet:
    """Jet over points (N,3) whose tangents are the three world axes."""
    n = x.shape[0]
    val = tape.constant(np.asarray(x, dtype=np.float64))
    tans = [tape.constant(np.broadcast_to(np.eye(3)[k], (n, 3)).copy())
            for k in range(3)]
    return Jet(val, tans)


def jconcat(jets: list, axis: int = -1) -> Jet:
    n_dirs = len(jets[0].tans)
    val = concat([j.val for j in jets], axis=axis)
    tans = []
    for k in range(n_dirs):
        if all(j.tans[k] is None for j in jets):
            tans.append(None)
        else:
            tans.append(concat([j.tangent(k) for j in jets], axis=axis))
    return Jet(val, tans)


def spatial_gradient(jet: Jet) -> Var:
    """Stack per-direction tangents of a scalar-per-point jet into (N,3)."""
    return stack([jet.tangent(k) for k in range(len(jet.tans))], axis=-1)
