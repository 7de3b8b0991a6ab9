"""Loss terms and the weighted objective.

Reconstruction, mask, UV-guidance and cycle terms all use unsquared
Euclidean norms summed over their batch. The conformal term penalizes the
cosine between tangent-plane UV gradients at max-contribution surface points;
its spatial gradients arrive as tape nodes (from the jet evaluation) so the
whole quantity stays differentiable w.r.t. parameters.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tape, Var

GRAD_FLOOR = 1e-8


def mse_mask_loss(c_hat: Var, alpha_hat: Var, c_gt: np.ndarray,
                  alpha_gt: np.ndarray) -> Var:
    """Sum over rays of color-error norm plus mask-error magnitude."""
    c_term = (c_hat - np.asarray(c_gt)).norm(axis=-1).sum()
    a_term = (alpha_hat - np.asarray(alpha_gt)).abs().sum()
    return c_term + a_term


def uv_loss(u_pred: Var, u_gt: np.ndarray) -> Var:
    return (u_pred - np.asarray(u_gt)).norm(axis=-1).sum()


def cycle_loss(xc: Var, x_inv: Var) -> Var:
    """Distance between surface points and the inverse image of their UVs."""
    return (xc - x_inv).norm(axis=-1).sum()


def angle_loss(gu: Var, gv: Var, gs: Var) -> tuple["Var | None", int, int]:
    """Conformality penalty at surface points.

    gu, gv, gs: (N,3) spatial gradients of u, v and density. The density
    gradient direction is the surface normal; UV gradients are projected onto
    the tangent plane and their unsigned cosine summed. Points where any norm
    sits below GRAD_FLOOR are skipped; returns (loss or None, used, skipped).
    """
    nu = np.linalg.norm(gu.value, axis=-1)
    nv = np.linalg.norm(gv.value, axis=-1)
    ns = np.linalg.norm(gs.value, axis=-1)
    # The floor guards the *projected* norms too: projection can only shrink
    # a gradient, so prefilter on raw norms and recheck after projecting.
    keep = (nu > GRAD_FLOOR) & (nv > GRAD_FLOOR) & (ns > GRAD_FLOOR)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return None, 0, int(keep.size)
    gu, gv, gs = gu.take_rows(idx), gv.take_rows(idx), gs.take_rows(idx)
    n = gs / gs.norm(axis=-1, keepdims=True)
    pu = gu - (gu * n).sum(axis=-1, keepdims=True) * n
    pv = gv - (gv * n).sum(axis=-1, keepdims=True) * n
    npu = np.linalg.norm(pu.value, axis=-1)
    npv = np.linalg.norm(pv.value, axis=-1)
    keep2 = (npu > GRAD_FLOOR) & (npv > GRAD_FLOOR)
    idx2 = np.nonzero(keep2)[0]
    if idx2.size == 0:
        return None, 0, int(keep.size)
    if idx2.size < idx.size:
        pu, pv = pu.take_rows(idx2), pv.take_rows(idx2)
    cos = (pu * pv).sum(axis=-1).abs() / (pu.norm(axis=-1) * pv.norm(axis=-1))
    return cos.sum(), int(idx2.size), int(keep.size - idx2.size)


def semantic_loss(tape: Tape, rig) -> "Var | None":
    """Sum over frames and control points of landmark-distance norms."""
    total = None
    for t in range(rig.frames):
        res = rig.semantic_residuals(tape, t)
        if res is None:
            continue
        term = res.norm(axis=-1).sum()
        total = term if total is None else total + term
    return total


def uv_weight(iteration: int, tau: float) -> float:
    """exp(-k/tau): exactly 1 at k=0, monotone decreasing."""
    return float(np.exp(-iteration / tau))


class LossBreakdown:
    def __init__(self):
        self.parts: dict[str, float] = {}
        self.weighted: dict[str, float] = {}

    def as_line(self) -> str:
        return " ".join(f"{k}={v:.6g}" for k, v in self.parts.items())


def total_loss(tape: Tape, parts: dict, weights: dict) -> tuple[Var, LossBreakdown]:
    """Weighted sum of loss terms; parts maps name -> (Var or None).

    A non-finite component aborts with the component named, before it can
    poison the whole run's parameters.
    """
    br = LossBreakdown()
    total = None
    for name, term in parts.items():
        if term is None:
            br.parts[name] = 0.0
            continue
        val = float(np.asarray(term.value))
        if not np.isfinite(val):
            raise FloatingPointError(f"loss component {name!r} is not finite ({val})")
        w = weights.get(name, 1.0)
        br.parts[name] = val
        br.weighted[name] = w * val
        if w == 0.0:
            continue
        wterm = term * w if w != 1.0 else term
        total = wterm if total is None else total + wterm
    if total is None:
        total = tape.constant(np.array(0.0))
    return total, br
