"""Control-point deformation layer.

A rig carries, per frame, a rigid transform (quaternion + translation) into
stable space, control points s_i with radii r_i, and frame-shared canonical
targets z_i. A point deforms as

    x_bar = R x + t
    x' = x_bar + sum_i psi_i(x_bar) (z_i - s_i) / sum_i psi_i(x_bar)
    psi_i(x_bar) = exp(-||x_bar - s_i||^2 / r_i^2)

The blend denominator is stabilized as W + EPS and the displacement scaled by
W / (W + EPS): far from every control point the deformation fades to the
rigid motion alone instead of dividing by underflow. EPS is small enough that
W + EPS == W in double precision near W = 1, so interpolation at an isolated
control point is exact. The two quotients are computed separately; forming
W/(W+EPS)^2 first would underflow long before the factors do.

Rig parameters live in their own ParamStore, so edits can copy-on-write the
rig without touching field weights.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore, Tape, Var
from .jets import Jet
from .rigid import (apply_rigid, apply_rigid_inverse, procrustes, quat_to_rot,
                    quat_to_rot_var, rot_to_quat)

log = logging.getLogger(__name__)

EPS = 1e-18

ALL_FRAMES = -1


@dataclass
class ControlPointEdit:
    frame: int          # ALL_FRAMES targets the shared canonical points
    index: int
    delta: np.ndarray   # 3-vector displacement


class Rig:
    """Deformation rig over F frames and K control points.

    Parameter blocks: ``rig.quat`` (F,4), ``rig.trans`` (F,3),
    ``rig.spoints`` (F,K,3), ``rig.logradii`` (F,K), ``rig.targets`` (K,3).
    Landmarks (tracked references, observation space) are constants of shape
    (F,K,3); NaN rows mark frames without landmarks.
    """

    def __init__(self, store: ParamStore, landmarks: "np.ndarray | None" = None):
        self.store = store
        k = store["rig.targets"].shape[0]
        f = store["rig.quat"].shape[0]
        self.frames = f
        self.n_points = k
        if landmarks is None:
            landmarks = np.full((f, k, 3), np.nan)
        self.landmarks = np.asarray(landmarks, dtype=np.float64)

    # -- construction -------------------------------------------------------

    @staticmethod
    def identity(frames: int, spoints: np.ndarray, targets: np.ndarray,
                 radii: np.ndarray, landmarks=None, dtype=np.float64) -> "Rig":
        """Rig with identity rigid transforms and given geometry.

        ``spoints`` may be (K,3) (replicated across frames) or (F,K,3);
        ``radii`` likewise (K,) or (F,K).
        """
        store = ParamStore(dtype)
        targets = np.asarray(targets, dtype=np.float64)
        k = targets.shape[0]
        sp = np.asarray(spoints, dtype=np.float64)
        if sp.ndim == 2:
            sp = np.broadcast_to(sp, (frames, k, 3)).copy()
        rr = np.asarray(radii, dtype=np.float64)
        if rr.ndim == 1:
            rr = np.broadcast_to(rr, (frames, k)).copy()
        if np.any(rr <= 0):
            raise ValueError("radii must be positive")
        quat = np.zeros((frames, 4))
        quat[:, 0] = 1.0
        store.add("rig.quat", quat)
        store.add("rig.trans", np.zeros((frames, 3)))
        store.add("rig.spoints", sp)
        store.add("rig.logradii", np.log(rr))
        store.add("rig.targets", targets)
        return Rig(store, landmarks)

    def copy(self) -> "Rig":
        return Rig(self.store.copy(), self.landmarks.copy())

    # -- raw values ----------------------------------------------------------

    def quat(self, t: int) -> np.ndarray:
        return np.asarray(self.store["rig.quat"][t], dtype=np.float64)

    def trans(self, t: int) -> np.ndarray:
        return np.asarray(self.store["rig.trans"][t], dtype=np.float64)

    def rot(self, t: int) -> np.ndarray:
        return quat_to_rot(self.quat(t))

    def spoints(self, t: int) -> np.ndarray:
        return np.asarray(self.store["rig.spoints"][t], dtype=np.float64)

    def radii(self, t: int) -> np.ndarray:
        return np.exp(np.asarray(self.store["rig.logradii"][t], dtype=np.float64))

    def targets(self) -> np.ndarray:
        return np.asarray(self.store["rig.targets"], dtype=np.float64)

    def renormalize(self) -> None:
        """Project quaternions back to unit norm (after optimizer steps)."""
        q = self.store["rig.quat"]
        q /= np.linalg.norm(q, axis=1, keepdims=True)

    # -- tape-recorded pieces -------------------------------------------------

    def rigid_vars(self, tape: Tape, t: int) -> tuple[Var, Var]:
        q = self.store.leaf(tape, "rig.quat").take_rows(np.array([t])).reshape(4)
        tr = self.store.leaf(tape, "rig.trans").take_rows(np.array([t])).reshape(3)
        return quat_to_rot_var(q), tr

    def frame_points(self, tape: Tape, t: int) -> tuple[Var, Var, Var]:
        """(s_i, r_i^2, z_i) for frame t as tape nodes."""
        k = self.n_points
        sp = self.store.leaf(tape, "rig.spoints").take_rows(np.array([t])).reshape(k, 3)
        logr = self.store.leaf(tape, "rig.logradii").take_rows(np.array([t])).reshape(k)
        r2 = (logr * 2.0).exp()
        z = self.store.leaf(tape, "rig.targets")
        return sp, r2, z

    def deform(self, tape: Tape, x, t: int):
        """Observation points (N,3) -> canonical points; Var or Jet."""
        R, tr = self.rigid_vars(tape, t)
        x_bar = apply_rigid(x, R, tr)
        return self.blend(tape, x_bar, t)

    def blend(self, tape: Tape, x_bar, t: int):
        """RBF displacement blend in stable space; Var or Jet.

        Distances use the direct difference (not the expanded quadratic) so
        that a query exactly on a control point yields d2 = 0 and psi = 1
        bit-exactly, which the interpolation guarantee depends on.
        """
        sp, r2, z = self.frame_points(tape, t)
        n = x_bar.shape[0]
        k = self.n_points
        diff = x_bar.reshape(n, 1, 3).broadcast_to((n, k, 3)) - sp   # (N,K,3)
        d2 = (diff * diff).sum(axis=-1)                              # (N,K)
        psi = (-(d2 / r2)).exp()
        w = psi.sum(axis=-1, keepdims=True)                          # (N,1)
        num = (psi.reshape(n, k, 1) * (z - sp)).sum(axis=1)          # (N,3)
        disp = (num / (w + EPS)) * (w / (w + EPS))
        return x_bar + disp

    def semantic_residuals(self, tape: Tape, t: int) -> "Var | None":
        """Observation-space control points minus landmarks, frame t (K,3).

        Control points live in stable space; they are pulled back through the
        frame's rigid transform to compare against tracked landmarks. Frames
        without landmarks return None (skipped with a warning).
        """
        if np.any(np.isnan(self.landmarks[t])):
            log.warning("frame %d has no landmarks; skipped in semantic loss", t)
            return None
        R, tr = self.rigid_vars(tape, t)
        sp, _, _ = self.frame_points(tape, t)
        s_obs = apply_rigid_inverse(sp, R, tr)
        return s_obs - tape.constant(self.landmarks[t])

    # -- numpy-only evaluation (ground truth, preview, oracles) ----------------

    def deform_np(self, x: np.ndarray, t: int) -> np.ndarray:
        x_bar = x @ self.rot(t).T + self.trans(t)
        return self.blend_np(x_bar, t)

    def blend_np(self, x_bar: np.ndarray, t: int) -> np.ndarray:
        disp, _ = self._blend_parts(x_bar, t)
        return x_bar + disp

    def _blend_parts(self, x_bar: np.ndarray, t: int):
        sp = self.spoints(t)
        r2 = self.radii(t) ** 2
        d2 = ((x_bar[:, None, :] - sp[None, :, :]) ** 2).sum(-1)
        psi = np.exp(-d2 / r2)
        w = psi.sum(-1, keepdims=True)
        num = psi @ (self.targets() - sp)
        disp = (num / (w + EPS)) * (w / (w + EPS))
        return disp, psi

    def blend_jacobian_np(self, x_bar: np.ndarray, t: int) -> np.ndarray:
        """d(blend)/d(x_bar) per point, analytic (N,3,3), identity included.

        With g(w) = w/(w+EPS)^2 the displacement is num*g(w), so
        J = I + dnum*g(w) + num (outer) dw * g'(w), g'(w) = (EPS-w)/(w+EPS)^3.
        """
        sp = self.spoints(t)
        r2 = self.radii(t) ** 2
        diff = x_bar[:, None, :] - sp[None, :, :]
        psi = np.exp(-(diff ** 2).sum(-1) / r2)
        dpsi = -2.0 * psi[:, :, None] * diff / r2[None, :, None]   # (N,K,3)
        w = psi.sum(-1)                                            # (N,)
        dw = dpsi.sum(1)                                           # (N,3)
        dvec = self.targets() - sp                                 # (K,3)
        num = psi @ dvec                                           # (N,3)
        we = w + EPS
        gw = (w / we) / we
        dgw = (EPS - w) / we ** 3
        dnum = np.einsum("nkb,ka->nab", dpsi, dvec)                # (N,3,3)
        j = dnum * gw[:, None, None]
        j += num[:, :, None] * dw[:, None, :] * dgw[:, None, None]
        j += np.eye(3)[None]
        return j

    def deform_preview_np(self, y: np.ndarray, t: int) -> np.ndarray:
        """Canonical points -> observation space (approximate blend inverse).

        Kernels sit at the targets with the frame's radii and displacements
        (s_i - z_i); at an isolated control point this inverts the forward
        blend exactly (z_i -> s_i). Used by the mesh preview path.
        """
        z = self.targets()
        sp = self.spoints(t)
        r2 = self.radii(t) ** 2
        d2 = ((y[:, None, :] - z[None, :, :]) ** 2).sum(-1)
        psi = np.exp(-d2 / r2)
        w = psi.sum(-1, keepdims=True)
        num = psi @ (sp - z)
        x_bar = y + (num / (w + EPS)) * (w / (w + EPS))
        return (x_bar - self.trans(t)) @ self.rot(t)

    # -- edits ---------------------------------------------------------------

    def apply_edit(self, edit: ControlPointEdit) -> "Rig":
        """Copy-on-write edit: all-frames edits move the shared target,
        single-frame edits move that frame's control point."""
        if not (0 <= edit.index < self.n_points):
            raise IndexError(f"control point index {edit.index} out of range")
        if edit.frame != ALL_FRAMES and not (0 <= edit.frame < self.frames):
            raise IndexError(f"frame {edit.frame} out of range")
        delta = np.asarray(edit.delta, dtype=np.float64)
        if delta.shape != (3,):
            raise ValueError("edit delta must be a 3-vector")
        out = self.copy()
        if edit.frame == ALL_FRAMES:
            out.store["rig.targets"][edit.index] += delta
        else:
            out.store["rig.spoints"][edit.frame, edit.index] += delta
        return out


def rbf_weights(x_bar: np.ndarray, spoints: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """psi_i = exp(-||x - s_i||^2 / r_i^2) for points (N,3) against (K,3)."""
    d2 = ((np.atleast_2d(x_bar)[:, None, :] - spoints[None, :, :]) ** 2).sum(-1)
    return np.exp(-d2 / np.asarray(radii) ** 2)


def init_radii(spoints: np.ndarray, n_neighbors: int = 3) -> np.ndarray:
    """Mean distance to the nearest fellow control points."""
    k = spoints.shape[0]
    if k < 2:
        return np.ones(k)
    d = np.linalg.norm(spoints[:, None, :] - spoints[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    m = min(n_neighbors, k - 1)
    near = np.sort(d, axis=1)[:, :m]
    return near.mean(axis=1)


def init_rig(frame_vertices: np.ndarray, control_idx: np.ndarray,
             canonical_vertices: np.ndarray, dtype=np.float64) -> Rig:
    """Rig from tracked meshes: per-frame rigid fit to the canonical mesh,
    control points from the selected vertices, targets from canonical ones.

    frame_vertices: (F,P,3); control_idx: (K,) into P; canonical: (P,3).
    """
    fv = np.asarray(frame_vertices, dtype=np.float64)
    cv = np.asarray(canonical_vertices, dtype=np.float64)
    idx = np.asarray(control_idx, dtype=np.int64)
    f = fv.shape[0]
    store = ParamStore(dtype)
    quat = np.zeros((f, 4))
    trans = np.zeros((f, 3))
    spoints = np.zeros((f, idx.size, 3))
    radii = np.zeros((f, idx.size))
    for t in range(f):
        R, tr, _ = procrustes(fv[t], cv)
        quat[t] = rot_to_quat(R)
        trans[t] = tr
        spoints[t] = fv[t, idx] @ R.T + tr
        radii[t] = init_radii(spoints[t])
    store.add("rig.quat", quat)
    store.add("rig.trans", trans)
    store.add("rig.spoints", spoints)
    store.add("rig.logradii", np.log(radii))
    store.add("rig.targets", cv[idx])
    return Rig(store, landmarks=fv[:, idx, :].copy())
