"""Counter-based uniform generator (splitmix64 finalizer).

Rays hash (seed, stream, counter) straight to uniforms, so a ray's samples
are identical no matter how rays are grouped into batches or threads.
"""
from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_key(*parts: int) -> int:
    """Fold integers into one 64-bit key, order-sensitive."""
    h = np.uint64(0x243F6A8885A308D3)
    with np.errstate(over="ignore"):
        for p in parts:
            h = _mix((h + np.uint64(p & 0xFFFFFFFFFFFFFFFF)) * _GAMMA)
    return int(h)


def uniforms(key: int, stream: int, n: int) -> np.ndarray:
    """n doubles in [0,1) from counter positions 0..n-1 of (key, stream)."""
    base = np.uint64(hash_key(key, stream))
    ctr = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _mix(base + (ctr + np.uint64(1)) * _GAMMA)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def hash_keys(*parts) -> np.ndarray:
    """Vectorized hash_key; integer arrays broadcast, bit-identical per lane."""
    h = np.uint64(0x243F6A8885A308D3)
    with np.errstate(over="ignore"):
        for p in parts:
            arr = np.asarray(p)
            if arr.dtype != np.uint64:
                arr = arr.astype(np.int64).astype(np.uint64)
            h = _mix((h + arr) * _GAMMA)
    return h


def uniforms_batch(keys: np.ndarray, stream: int, n: int) -> np.ndarray:
    """Rows of uniforms(key, stream, n) for a vector of keys."""
    base = hash_keys(keys, stream)
    ctr = (np.arange(n, dtype=np.uint64) + np.uint64(1)) * _GAMMA
    with np.errstate(over="ignore"):
        bits = _mix(base[..., None] + ctr)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
