"""Rigid transforms: quaternion rotations, tape-differentiable application,
and least-squares alignment of point sets (Kabsch).

Convention: quaternions are (w, x, y, z); a transform maps observation space
into stable space via x_bar = R x + t. Points are row vectors, so batches
apply as X @ R.T + t.
"""
from __future__ import annotations

import logging

import numpy as np

from .autodiff import ParamStore, Tape, Var, stack
from .jets import Jet

log = logging.getLogger(__name__)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = quat_normalize(np.asarray(q, dtype=np.float64))
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Inverse of quat_to_rot, stable across trace signs."""
    m = np.asarray(R, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


def quat_to_rot_var(q: Var) -> Var:
    """Rotation matrix as a tape node; q is normalized on the tape first."""
    qn = q * (1.0 / (q * q).sum() ** 0.5)
    w, x, y, z = (qn.col(k) for k in range(4))
    one = q.tape.constant(np.array(1.0))
    r0 = stack([one - (y * y + z * z) * 2.0, (x * y - w * z) * 2.0,
                (x * z + w * y) * 2.0], axis=-1)
    r1 = stack([(x * y + w * z) * 2.0, one - (x * x + z * z) * 2.0,
                (y * z - w * x) * 2.0], axis=-1)
    r2 = stack([(x * z - w * y) * 2.0, (y * z + w * x) * 2.0,
                one - (x * x + y * y) * 2.0], axis=-1)
    return stack([r0, r1, r2], axis=0)


def apply_rigid(X, R: Var, t: Var):
    """X @ R.T + t for Var or Jet batches (N,3)."""
    rt = R.t2()
    return X @ rt + t


def apply_rigid_inverse(X, R: Var, t: Var):
    """(X - t) @ R, the inverse of apply_rigid."""
    return (X - t) @ R


def procrustes(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Best rigid (R, t) with dst ~ src @ R.T + t, via SVD.

    Returns (R, t, degenerate). Rank-deficient configurations (fewer than 3
    independent directions) fall back to identity rotation with a centroid
    shift and are reported through the flag and a log line.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, s, vt = np.linalg.svd(h)
    scale = s[0] if s[0] > 0 else 1.0
    if src.shape[0] < 3 or s[1] / scale < 1e-9:
        log.warning("degenerate point configuration in rigid fit; using identity rotation")
        return np.eye(3), cd - cs, True
    d = np.sign(np.linalg.det(vt.T @ u.T))
    R = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return R, cd - R @ cs, False
