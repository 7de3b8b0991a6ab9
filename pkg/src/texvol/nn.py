"""Fourier features, skip-connection MLPs and time-embedding tables.

All forward functions accept either a tape ``Var`` or a ``Jet`` (value plus
spatial tangents) and return the same kind, so the geometry networks can be
evaluated with or without spatial derivatives through one code path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape, Var, concat
from .jets import Jet, jconcat


def pe_dim(d: int, num_freqs: int) -> int:
    return d * (1 + 2 * num_freqs)


def _cat(parts, axis=-1):
    if isinstance(parts[0], Jet):
        return jconcat(parts, axis=axis)
    if isinstance(parts[0], Var):
        return concat(parts, axis=axis)
    return np.concatenate(parts, axis=axis)


def pe_encode(x, num_freqs: int):
    """[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(...)].

    Componentwise; output width is d*(1+2L). Works on arrays, Vars and Jets.
    """
    if num_freqs == 0:
        return x
    parts = [x]
    for k in range(num_freqs):
        arg = x * (np.pi * (2.0 ** k))
        if isinstance(arg, (Var, Jet)):
            parts.append(arg.sin())
            parts.append(arg.cos())
        else:
            parts.append(np.sin(arg))
            parts.append(np.cos(arg))
    return _cat(parts, axis=-1)


@dataclass
class MlpSpec:
    """depth counts affine layers (depth-1 hidden ReLU + 1 linear output)."""
    d_in: int
    d_out: int
    depth: int = 4
    width: int = 64
    skip: "int | None" = 2

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.d_in < 1 or self.d_out < 1:
            raise ValueError("all MLP dimensions must be >= 1")
        if self.skip is not None and not (0 < self.skip < self.depth):
            raise ValueError("skip index must satisfy 0 < skip < depth")

    def layer_dims(self):
        """(fan_in, fan_out) per affine layer, skip concat included."""
        dims = []
        for l in range(self.depth):
            fi = self.d_in if l == 0 else self.width
            if self.skip is not None and l == self.skip:
                fi += self.d_in
            fo = self.d_out if l == self.depth - 1 else self.width
            dims.append((fi, fo))
        return dims


def init_mlp(store: ParamStore, prefix: str, spec: MlpSpec, rng: np.random.Generator):
    """He-initialized weights, zero biases, named ``{prefix}.W{l}/b{l}``."""
    for l, (fi, fo) in enumerate(spec.layer_dims()):
        scale = np.sqrt(2.0 / fi)
        store.add(f"{prefix}.W{l}", rng.normal(0.0, scale, size=(fi, fo)))
        store.add(f"{prefix}.b{l}", np.zeros(fo))


def mlp_forward(tape: Tape, store: ParamStore, prefix: str, spec: MlpSpec, x):
    """Affine/ReLU stack; the encoded input re-enters at the skip layer."""
    h = x
    for l in range(spec.depth):
        if spec.skip is not None and l == spec.skip:
            h = _cat([h, x], axis=-1)
        w = store.leaf(tape, f"{prefix}.W{l}")
        b = store.leaf(tape, f"{prefix}.b{l}")
        h = h @ w + b
        if l < spec.depth - 1:
            h = h.relu()
    return h


def init_embedding(store: ParamStore, name: str, frames: int, length: int,
                   rng: np.random.Generator, scale: float = 0.1):
    store.add(name, rng.normal(0.0, scale, size=(frames, length)))


def embed_time(tape: Tape, store: ParamStore, name: str, t, n: "int | None" = None,
               pinned: bool = False) -> Var:
    """Rows of the embedding table for frame indices ``t``.

    ``t`` is a scalar index or an (N,) index array; a scalar with ``n`` set is
    broadcast to n rows. ``pinned`` substitutes row 0 for every frame (the
    time-independent mode used by the first training stage); gradient then
    flows to row 0 only.
    """
    table = store.leaf(tape, name)
    idx = np.asarray(t, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= table.value.shape[0]):
        raise IndexError(f"frame index out of range for table {name!r}")
    if pinned:
        idx = np.zeros_like(idx)
    if idx.ndim == 0:
        # One row broadcast to n: the adjoint is a single row sum instead of
        # a scatter over n identical indices.
        row = table.take_rows(idx.reshape(1))
        rows = n if n is not None else 1
        return row.broadcast_to((rows, table.value.shape[1]))
    return table.take_rows(idx)
