"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tape`` records primitive array operations in execution order. Calling
``Tape.backward`` on a scalar node replays the record in reverse, pushing
adjoints to every parent exactly once per record and accumulating parameter
gradients into the owning ``ParamStore``. Values are plain numpy arrays; the
engine is deliberately minimal (no graph rewriting, no fusion) and supports
exactly the operations the fields, renderer and losses need.

Constants (numbers or arrays that are not ``Var``) participate in ops without
being recorded, so they receive no gradient.
"""
from __future__ import annotations

import numpy as np


class ParamStore:
    """Named parameter blocks plus their gradient and Adam accumulators.

    Gradient arrays always mirror the block shape. Moments are zero until the
    first optimizer step; ``step`` is shared by all blocks in the store.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.blocks: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.blocks:
            raise ValueError(f"duplicate parameter block {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self.blocks[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return arr

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def set(self, name: str, value: np.ndarray) -> None:
        arr = np.asarray(value, dtype=self.dtype)
        if arr.shape != self.blocks[name].shape:
            raise ValueError(f"shape mismatch writing block {name!r}")
        self.blocks[name] = arr

    def names(self) -> list[str]:
        return list(self.blocks)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def leaf(self, tape: "Tape", name: str) -> "Var":
        """Enter block ``name`` onto ``tape`` as a differentiable leaf."""
        return tape._push(self.blocks[name], (), None, binding=(self, name))

    def copy(self) -> "ParamStore":
        """Deep copy of parameters and optimizer state (copy-on-write edits)."""
        out = ParamStore(self.dtype)
        for name, arr in self.blocks.items():
            out.blocks[name] = arr.copy()
            out.grads[name] = self.grads[name].copy()
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        out.step = self.step
        return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of a numpy broadcast)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Ordered record of primitive ops; inputs always precede outputs."""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.pullbacks: list = []
        self.bindings: list = []

    def __len__(self) -> int:
        return len(self.values)

    def _push(self, value, parents, pullback, binding=None) -> "Var":
        self.values.append(np.asarray(value))
        self.parents.append(parents)
        self.pullbacks.append(pullback)
        self.bindings.append(binding)
        return Var(self, len(self.values) - 1)

    def constant(self, value) -> "Var":
        return self._push(value, (), None)

    def backward(self, loss: "Var", wrt: "list[Var] | None" = None):
        """Accumulate d(loss)/d(param) into every bound ParamStore.

        ``loss`` must be scalar. Gradients add onto whatever is already in the
        stores; call ``zero_grad`` between steps. When ``wrt`` is given, the
        adjoints of those vars are also returned (fresh, not accumulated).
        """
        if loss.tape is not self:
            raise ValueError("loss was recorded on a different tape")
        if np.ndim(self.values[loss.i]) != 0 and np.size(self.values[loss.i]) != 1:
            raise ValueError("backward requires a scalar loss node")
        adj: list = [None] * (loss.i + 1)
        # A first contribution is held by reference (it may be a view of a
        # forward value or another adjoint); a second contribution forces a
        # fresh allocation, after which in-place accumulation is safe.
        owned = bytearray(loss.i + 1)
        adj[loss.i] = np.ones_like(self.values[loss.i])
        for i in range(loss.i, -1, -1):
            g = adj[i]
            if g is None:
                continue
            binding = self.bindings[i]
            if binding is not None:
                store, name = binding
                store.grads[name] += g
            pb = self.pullbacks[i]
            if pb is None:
                continue
            for p, pg in zip(self.parents[i], pb(g)):
                if pg is None:
                    continue
                if adj[p] is None:
                    adj[p] = pg
                elif owned[p]:
                    adj[p] += pg
                else:
                    adj[p] = adj[p] + pg
                    owned[p] = 1
        if wrt is not None:
            zero = lambda v: np.zeros_like(self.values[v.i])
            return [adj[v.i] if v.i <= loss.i and adj[v.i] is not None else zero(v)
                    for v in wrt]
        return None


class Var:
    """Handle to a tape node. Supports numpy-style arithmetic."""

    __slots__ = ("tape", "i")
    # Make ndarray <op> Var dispatch to our reflected operators instead of
    # numpy trying (and failing) to coerce the Var.
    __array_ufunc__ = None

    def __init__(self, tape: Tape, i: int):
        self.tape = tape
        self.i = i

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.i]

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, node={self.i})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self.tape._push(
                a + b, (self.i, other.i),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
        a = self.value
        return self.tape._push(a + other, (self.i,),
                               lambda g: (_unbroadcast(g, a.shape),))

    __radd__ = __add__

    def __neg__(self):
        return self.tape._push(-self.value, (self.i,), lambda g: (-g,))

    def __sub__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self.tape._push(
                a - b, (self.i, other.i),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
        a = self.value
        return self.tape._push(a - other, (self.i,),
                               lambda g: (_unbroadcast(g, a.shape),))

    def __rsub__(self, other):
        a = self.value
        return self.tape._push(other - a, (self.i,),
                               lambda g: (_unbroadcast(-g, a.shape),))

    def __mul__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self.tape._push(
                a * b, (self.i, other.i),
                lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))
        a = self.value
        # Keep python scalars unwrapped: asarray would force a float64 0-d
        # array and promote float32 operands.
        c = other if isinstance(other, (int, float)) else np.asarray(other)
        return self.tape._push(a * c, (self.i,),
                               lambda g: (_unbroadcast(g * c, a.shape),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self.tape._push(
                a / b, (self.i, other.i),
                lambda g: (_unbroadcast(g / b, a.shape),
                           _unbroadcast(-g * a / (b * b), b.shape)))
        a = self.value
        c = other if isinstance(other, (int, float)) else np.asarray(other)
        return self.tape._push(a / c, (self.i,),
                               lambda g: (_unbroadcast(g / c, a.shape),))

    def __rtruediv__(self, other):
        a = self.value
        c = other if isinstance(other, (int, float)) else np.asarray(other)
        return self.tape._push(c / a, (self.i,),
                               lambda g: (_unbroadcast(-g * c / (a * a), a.shape),))

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self.value
        return self.tape._push(a ** p, (self.i,),
                               lambda g: (g * p * a ** (p - 1),))

    def __matmul__(self, other):
        if isinstance(other, Var):
            a, b = self.value, other.value
            return self.tape._push(a @ b, (self.i, other.i),
                                   lambda g: (g @ b.T, a.T @ g))
        a = self.value
        b = np.asarray(other)
        return self.tape._push(a @ b, (self.i,), lambda g: (g @ b.T,))

    def __rmatmul__(self, other):
        a = np.asarray(other)
        b = self.value
        return self.tape._push(a @ b, (self.i,), lambda g: (a.T @ g,))

    # -- elementwise functions -------------------------------------------

    def exp(self):
        out = np.exp(self.value)
        return self.tape._push(out, (self.i,), lambda g: (g * out,))

    def log(self):
        a = self.value
        return self.tape._push(np.log(a), (self.i,), lambda g: (g / a,))

    def sqrt(self):
        out = np.sqrt(self.value)
        return self.tape._push(out, (self.i,), lambda g: (g * 0.5 / out,))

    def sin(self):
        a = self.value
        return self.tape._push(np.sin(a), (self.i,), lambda g: (g * np.cos(a),))

    def cos(self):
        a = self.value
        return self.tape._push(np.cos(a), (self.i,), lambda g: (-g * np.sin(a),))

    def abs(self):
        a = self.value
        return self.tape._push(np.abs(a), (self.i,), lambda g: (g * np.sign(a),))

    def relu(self):
        a = self.value
        mask = a > 0
        return self.tape._push(np.maximum(a, 0), (self.i,),
                               lambda g: (g * mask,))

    def sigmoid(self):
        a = self.value
        out = 1.0 / (1.0 + np.exp(-np.clip(a, -500, 500)))
        return self.tape._push(out, (self.i,), lambda g: (g * out * (1.0 - out),))

    def softplus(self):
        a = self.value
        out = np.logaddexp(0.0, a)
        sig = 1.0 / (1.0 + np.exp(-np.clip(a, -500, 500)))
        return self.tape._push(out, (self.i,), lambda g: (g * sig,))

    def clamp(self, lo: float, hi: float):
        a = self.value
        mask = (a >= lo) & (a <= hi)
        return self.tape._push(np.clip(a, lo, hi), (self.i,),
                               lambda g: (g * mask,))

    def gate(self, mask) -> "Var":
        """Multiply by a constant mask (no gradient through the mask)."""
        a = self.value
        m = np.asarray(mask)
        return self.tape._push(a * m, (self.i,), lambda g: (g * m,))

    # -- reductions and shape ops ----------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self.value

        def pull(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.shape),)

        return self.tape._push(a.sum(axis=axis, keepdims=keepdims), (self.i,), pull)

    def mean(self, axis=None, keepdims=False):
        a = self.value
        n = a.size if axis is None else a.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def cumsum(self, axis: int):
        a = self.value
        return self.tape._push(
            np.cumsum(a, axis=axis), (self.i,),
            lambda g: (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),))

    def reshape(self, *shape):
        a = self.value
        return self.tape._push(a.reshape(*shape), (self.i,),
                               lambda g: (g.reshape(a.shape),))

    def broadcast_to(self, shape):
        a = self.value
        return self.tape._push(np.broadcast_to(a, shape).copy(), (self.i,),
                               lambda g: (_unbroadcast(g, a.shape),))

    def cols(self, j0: int, j1: int) -> "Var":
        """Slice columns [j0:j1] of the last axis."""
        a = self.value

        def pull(g):
            out = np.zeros_like(a)
            out[..., j0:j1] = g
            return (out,)

        return self.tape._push(a[..., j0:j1], (self.i,), pull)

    def col(self, j: int) -> "Var":
        a = self.value

        def pull(g):
            out = np.zeros_like(a)
            out[..., j] = g
            return (out,)

        return self.tape._push(a[..., j], (self.i,), pull)

    def take_rows(self, idx) -> "Var":
        """Gather rows along the first axis; repeated indices accumulate."""
        a = self.value
        ix = np.asarray(idx)

        def pull(g):
            out = np.zeros_like(a)
            # bincount beats np.add.at by an order of magnitude when the
            # gather repeats rows (texture corners, frame embeddings).
            if out.ndim == 2 and ix.ndim == 1:
                n = out.shape[0]
                for j in range(out.shape[1]):
                    out[:, j] = np.bincount(ix, weights=g[:, j], minlength=n)
            elif out.ndim == 1 and ix.ndim == 1:
                out[:] = np.bincount(ix, weights=g, minlength=out.shape[0])
            else:
                np.add.at(out, ix, g)
            return (out,)

        return self.tape._push(a[ix], (self.i,), pull)

    def t2(self) -> "Var":
        """Transpose of a 2D var."""
        a = self.value
        return self.tape._push(a.T.copy(), (self.i,), lambda g: (g.T,))

    def cast(self, dtype) -> "Var":
        """Dtype conversion; the adjoint converts back."""
        a = self.value
        dt = np.dtype(dtype)
        if a.dtype == dt:
            return self
        return self.tape._push(a.astype(dt), (self.i,),
                               lambda g: (g.astype(a.dtype),))

    def norm(self, axis: int = -1, keepdims: bool = False) -> "Var":
        """Euclidean norm along ``axis``; zero vectors get zero gradient."""
        a = self.value
        out = np.sqrt((a * a).sum(axis=axis, keepdims=keepdims))

        def pull(g):
            denom = out if keepdims else np.expand_dims(out, axis)
            gg = g if keepdims else np.expand_dims(g, axis)
            safe = np.where(denom > 0.0, denom, 1.0)
            return (gg * a / safe,)

        return self.tape._push(out, (self.i,), pull)


def concat(vars: "list[Var]", axis: int = -1) -> Var:
    """Concatenate tape vars along ``axis``."""
    tape = vars[0].tape
    arrs = [v.value for v in vars]
    sizes = [a.shape[axis] for a in arrs]
    offs = np.cumsum([0] + sizes)

    def pull(g):
        return tuple(np.take(g, np.arange(offs[k], offs[k + 1]), axis=axis)
                     for k in range(len(arrs)))

    return tape._push(np.concatenate(arrs, axis=axis),
                      tuple(v.i for v in vars), pull)


def stack(vars: "list[Var]", axis: int = -1) -> Var:
    """Stack same-shape tape vars along a new axis."""
    tape = vars[0].tape
    arrs = [v.value for v in vars]

    def pull(g):
        return tuple(np.take(g, k, axis=axis) for k in range(len(arrs)))

    return tape._push(np.stack(arrs, axis=axis), tuple(v.i for v in vars), pull)


def as_var(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.constant(x)
