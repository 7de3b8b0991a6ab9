"""Explicit texture grid: bilinear lookup, region edits, color-space IO.

The grid is (H, W, 3), linear RGB, non-negative. UV convention: u indexes
width (axis 1), v indexes height (axis 0); texel (i, j) is centered at
((j + 0.5)/W, (i + 0.5)/H). Lookups clamp to the border (no wraparound).
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tape, Var


def _bilinear_setup(u: np.ndarray, h: int, w: int):
    """Corner indices and a clamp mask for sample positions (N,2)."""
    px = u[:, 0] * w - 0.5
    py = u[:, 1] * h - 0.5
    j0 = np.clip(np.floor(px), 0, w - 2).astype(np.int64)
    i0 = np.clip(np.floor(py), 0, h - 2).astype(np.int64)
    return px, py, i0, j0


def texture_lookup(tape: Tape, tex: Var, u) -> Var:
    """Bilinear sample of the grid at UVs (N,2); differentiable in both.

    Out-of-range coordinates clamp to the edge texel band, where the spatial
    derivative w.r.t. u is zero (fractions are clamped constants there).
    """
    h, w, _ = tex.shape
    uu = u if isinstance(u, Var) else tape.constant(np.asarray(u, dtype=np.float64))
    px_v = uu.col(0) * float(w) - 0.5
    py_v = uu.col(1) * float(h) - 0.5
    _, _, i0, j0 = _bilinear_setup(np.asarray(uu.value, dtype=np.float64), h, w)
    dt = px_v.value.dtype
    fx = (px_v - j0.astype(dt)).clamp(0.0, 1.0).reshape(-1, 1)
    fy = (py_v - i0.astype(dt)).clamp(0.0, 1.0).reshape(-1, 1)
    flat = tex.reshape(h * w, 3)
    c00 = flat.take_rows(i0 * w + j0)
    c01 = flat.take_rows(i0 * w + j0 + 1)
    c10 = flat.take_rows((i0 + 1) * w + j0)
    c11 = flat.take_rows((i0 + 1) * w + j0 + 1)
    top = c00 * (1.0 - fx) + c01 * fx
    bot = c10 * (1.0 - fx) + c11 * fx
    return top * (1.0 - fy) + bot * fy


def texture_lookup_np(tex: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Plain-array twin of texture_lookup (ground truth, previews)."""
    h, w, _ = tex.shape
    px, py, i0, j0 = _bilinear_setup(np.asarray(u, dtype=np.float64), h, w)
    fx = np.clip(px - j0, 0.0, 1.0)[:, None]
    fy = np.clip(py - i0, 0.0, 1.0)[:, None]
    c00 = tex[i0, j0]
    c01 = tex[i0, j0 + 1]
    c10 = tex[i0 + 1, j0]
    c11 = tex[i0 + 1, j0 + 1]
    return ((c00 * (1 - fx) + c01 * fx) * (1 - fy)
            + (c10 * (1 - fx) + c11 * fx) * fy)


def write_texture_region(tex: np.ndarray, origin: tuple, patch: np.ndarray) -> np.ndarray:
    """Copy-on-write overwrite of a rectangular region; origin is (row, col).

    The patch is clipped against the grid bounds; an empty intersection (or
    an empty patch) returns the texture unchanged.
    """
    patch = np.asarray(patch, dtype=tex.dtype)
    if patch.size == 0:
        return tex
    if patch.ndim != 3 or patch.shape[2] != tex.shape[2]:
        raise ValueError("patch must be (h, w, channels) matching the grid")
    r0, c0 = int(origin[0]), int(origin[1])
    r1, c1 = r0 + patch.shape[0], c0 + patch.shape[1]
    rr0, cc0 = max(r0, 0), max(c0, 0)
    rr1, cc1 = min(r1, tex.shape[0]), min(c1, tex.shape[1])
    if rr0 >= rr1 or cc0 >= cc1:
        return tex
    out = tex.copy()
    out[rr0:rr1, cc0:cc1] = patch[rr0 - r0:rr1 - r0, cc0 - c0:cc1 - c0]
    return out


def sparsity_loss(residuals: Var) -> Var:
    """Sum of |log-multiplier| over a batch of residual outputs."""
    return residuals.abs().sum()


# -- color space ------------------------------------------------------------

def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0
