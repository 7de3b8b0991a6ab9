"""Synthetic dynamic scene generation with exact ground truth.

The scene is a soft spherical density shell around a deforming sphere: a
known rig (rigid motion + control-point bumps) warps observation space into
the canonical frame, where density, lat-long UVs and a procedural texture are
analytic. Images and masks come from the same renderer used in training, run
on these analytic fields; tracked meshes come from inverting the ground-truth
deformation at canonical grid vertices with Newton iterations.

Determinism: the whole bundle is a function of (spec, seed). The sampling
key uses frame 0 for every frame so a zero-motion script yields bit-identical
images across frames.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .appearance import texture_lookup_np
from .deform import Rig, init_radii
from .render import Camera, render_image_np
from .rigid import rot_to_quat
from .scene import SceneDataset, compute_bbox, save_obj, save_png, save_raw_f32, save_scene


@dataclass
class SyntheticSpec:
    radius: float = 1.0
    shell_width_frac: float = 0.02     # shell width as a fraction of radius
    amplitude: float = 50.0            # peak density
    frames: int = 5
    image_size: int = 64
    n_train_views: int = 8
    cam_distance_frac: float = 3.0     # camera ring radius over sphere radius
    cam_elevations: tuple = (-0.35, 0.2, 0.5)  # radians, cycled over the ring
    n_controls: int = 8
    motion_amp_frac: float = 0.12      # radial bump amplitude over radius
    rot_amp: float = 0.10              # radians of rigid wobble about z
    trans_amp_frac: float = 0.03       # rigid translation over radius
    shading_amp: float = 0.0           # time-varying brightness multiplier
    mesh_res: tuple = (24, 16)         # (longitude, latitude) grid
    tex_res: int = 128                 # rasterized ground-truth texture
    gt_samples: int = 256              # stratified samples for dataset renders


# -- canonical analytic fields ---------------------------------------------------

def shell_density(y: np.ndarray, radius: float, width: float, amp: float) -> np.ndarray:
    r = np.linalg.norm(y, axis=-1)
    return amp * np.exp(-((r - radius) ** 2) / width ** 2)


def sphere_uv(y: np.ndarray) -> np.ndarray:
    """Lat-long parameterization; u wraps in longitude, v is colatitude."""
    y = np.atleast_2d(y)
    r = np.linalg.norm(y, axis=-1)
    u = np.arctan2(y[:, 1], y[:, 0]) / (2 * np.pi) + 0.5
    v = np.arccos(np.clip(y[:, 2] / np.maximum(r, 1e-300), -1.0, 1.0)) / np.pi
    return np.stack([u, v], axis=-1)


def sphere_point(uv: np.ndarray, radius: float) -> np.ndarray:
    uv = np.atleast_2d(uv)
    phi = (uv[:, 0] - 0.5) * 2 * np.pi
    theta = uv[:, 1] * np.pi
    st = np.sin(theta)
    return radius * np.stack([st * np.cos(phi), st * np.sin(phi),
                              np.cos(theta)], axis=-1)


def procedural_texture(uv: np.ndarray) -> np.ndarray:
    """Smooth RGB pattern, periodic in u (no seam discontinuity)."""
    u, v = uv[:, 0], uv[:, 1]
    r = 0.5 + 0.3 * np.sin(2 * np.pi * 3 * u)
    g = 0.5 + 0.3 * np.sin(2 * np.pi * 2 * u + 1.7) * np.cos(np.pi * 2 * v)
    b = 0.5 + 0.3 * np.cos(np.pi * 3 * v + 0.5)
    return np.clip(np.stack([r, g, b], axis=-1), 0.05, 0.95)


def rasterize_texture(res: int) -> np.ndarray:
    """Procedural texture sampled at texel centers of a res x res grid."""
    jj, ii = np.meshgrid(np.arange(res), np.arange(res))
    uv = np.stack([(jj.ravel() + 0.5) / res, (ii.ravel() + 0.5) / res], axis=-1)
    return procedural_texture(uv).reshape(res, res, 3)


def shade(spec: SyntheticSpec, t: int) -> float:
    return 1.0 + spec.shading_amp * np.sin(2 * np.pi * t / spec.frames)


class GroundTruthFields:
    """density_color callback over the analytic scene at any frame."""

    def __init__(self, spec: SyntheticSpec, rig: Rig):
        self.spec = spec
        self.rig = rig

    def density_color(self, x: np.ndarray, d: np.ndarray, t: int):
        y = self.rig.deform_np(x, t)
        sigma = shell_density(y, self.spec.radius,
                              self.spec.shell_width_frac * self.spec.radius,
                              self.spec.amplitude)
        rgb = procedural_texture(sphere_uv(y)) * shade(self.spec, t)
        return sigma, rgb


# -- ground-truth rig -------------------------------------------------------------

def make_gt_rig(spec: SyntheticSpec, control_targets: np.ndarray) -> Rig:
    """Rig whose targets are the given canonical points, with sinusoidal
    radial bumps and a gentle rigid wobble."""
    k = control_targets.shape[0]
    f = spec.frames
    radii = init_radii(control_targets)
    dirs = control_targets / np.linalg.norm(control_targets, axis=-1, keepdims=True)
    phases = 2 * np.pi * np.arange(k) / k
    sp = np.zeros((f, k, 3))
    quat = np.zeros((f, 4))
    trans = np.zeros((f, 3))
    for t in range(f):
        wobble = np.sin(2 * np.pi * t / f)
        bump = spec.motion_amp_frac * spec.radius * np.sin(
            2 * np.pi * t / f + phases)[:, None] * dirs
        sp[t] = control_targets - bump
        ang = spec.rot_amp * wobble
        rot = np.array([[np.cos(ang), -np.sin(ang), 0.0],
                        [np.sin(ang), np.cos(ang), 0.0],
                        [0.0, 0.0, 1.0]])
        quat[t] = rot_to_quat(rot)
        trans[t] = spec.trans_amp_frac * spec.radius * np.array(
            [np.sin(2 * np.pi * t / f), np.cos(2 * np.pi * t / f), 0.0])
    rig = Rig.identity(f, sp, control_targets, np.broadcast_to(radii, (f, k)))
    rig.store.set("rig.quat", quat)
    rig.store.set("rig.trans", trans)
    return rig


def invert_deformation(rig: Rig, y: np.ndarray, t: int, tol: float = 1e-10,
                       max_iter: int = 50) -> np.ndarray:
    """Observation points mapping to canonical targets y under the rig.

    Solves blend(x_bar) = y by Newton iteration with the analytic blend
    Jacobian, then removes the rigid transform. Diverging points would fail
    the residual assertion; the synthetic motions stay well inside the
    contraction regime.
    """
    x_bar = y.copy()
    for _ in range(max_iter):
        res = rig.blend_np(x_bar, t) - y
        if np.abs(res).max() < tol:
            break
        jac = rig.blend_jacobian_np(x_bar, t)
        x_bar -= np.linalg.solve(jac, res[..., None])[..., 0]
    res = np.abs(rig.blend_np(x_bar, t) - y).max()
    if res > 1e-9:
        raise RuntimeError(f"deformation inversion stalled (residual {res:.3e})")
    return (x_bar - rig.trans(t)) @ rig.rot(t)


# -- mesh -----------------------------------------------------------------------

def sphere_grid_mesh(spec: SyntheticSpec):
    """Open lat-long grid (poles excluded) with seam-free vertex UVs."""
    nu, nv = spec.mesh_res
    uu = (np.arange(nu) + 0.5) / nu
    vv = np.arange(1, nv) / nv
    u, v = np.meshgrid(uu, vv)
    uvs = np.stack([u.ravel(), v.ravel()], axis=-1)
    verts = sphere_point(uvs, spec.radius)
    faces = []
    for i in range(nv - 2):
        for j in range(nu):
            a = i * nu + j
            b = i * nu + (j + 1) % nu
            c = (i + 1) * nu + j
            d = (i + 1) * nu + (j + 1) % nu
            faces.append([a, b, d])
            faces.append([a, d, c])
    return verts, uvs, np.array(faces, dtype=np.int64)


def pick_control_vertices(verts: np.ndarray, k: int) -> np.ndarray:
    """Spread control vertices over the mesh: nearest to k evenly distributed
    directions (golden-angle spiral)."""
    gold = np.pi * (3.0 - np.sqrt(5.0))
    zs = np.linspace(-0.75, 0.75, k)
    dirs = np.stack([np.sqrt(1 - zs ** 2) * np.cos(gold * np.arange(k)),
                     np.sqrt(1 - zs ** 2) * np.sin(gold * np.arange(k)), zs], axis=-1)
    target = dirs * np.linalg.norm(verts, axis=-1).mean()
    idx = []
    for p in target:
        d2 = ((verts - p) ** 2).sum(-1)
        d2[idx] = np.inf      # no duplicate picks
        idx.append(int(np.argmin(d2)))
    return np.array(idx, dtype=np.int64)


# -- cameras ---------------------------------------------------------------------

def look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-from-camera rotation: +z forward to the target, y down."""
    fwd = target - center
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.99:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=-1)


def ring_cameras(spec: SyntheticSpec) -> list:
    n = spec.n_train_views + 1
    size = spec.image_size
    dist = spec.cam_distance_frac * spec.radius
    # Keep the deformed shell (radius + bumps) comfortably in frame.
    half_fov = np.arctan(1.45 * spec.radius / dist)
    focal = 0.5 * size / np.tan(half_fov)
    cams = []
    for v in range(n):
        az = 2 * np.pi * v / n
        el = spec.cam_elevations[v % len(spec.cam_elevations)]
        center = dist * np.array([np.cos(el) * np.cos(az),
                                  np.cos(el) * np.sin(az), np.sin(el)])
        rot = look_at(center, np.zeros(3))
        cams.append(Camera(focal, focal, size / 2, size / 2, size, size, rot, center))
    return cams


# -- generator --------------------------------------------------------------------

def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir: "str | None" = None
                       ) -> tuple[SceneDataset, Rig]:
    """Build the dataset (+ ground-truth bundle on disk when out_dir given)."""
    verts_canon, uvs, faces = sphere_grid_mesh(spec)
    control_idx = pick_control_vertices(verts_canon, spec.n_controls)
    rig = make_gt_rig(spec, verts_canon[control_idx])
    fields = GroundTruthFields(spec, rig)

    mesh_frames = np.stack([invert_deformation(rig, verts_canon, t)
                            for t in range(spec.frames)])
    rig.landmarks = mesh_frames[:, control_idx, :].copy()

    bbox = compute_bbox(np.concatenate([mesh_frames.reshape(-1, 3),
                                        verts_canon]), padding=0.25)
    cams = ring_cameras(spec)
    f, v = spec.frames, len(cams)
    size = spec.image_size
    images = np.zeros((f, v, size, size, 3))
    masks = np.zeros((f, v, size, size))
    for t in range(f):
        for view in range(v):
            # rng_frame pinned: identical sampling pattern across frames
            img, alpha = render_image_np(
                fields.density_color, cams[view], t, bbox,
                n_coarse=spec.gt_samples, n_fine=0,
                seed=seed, view=view, chunk=1024, rng_frame=0)
            images[t, view] = np.clip(img, 0.0, 1.0)
            masks[t, view] = np.clip(alpha, 0.0, 1.0)

    ds = SceneDataset(
        cameras=cams, images=images, masks=masks, mesh_vertices=mesh_frames,
        mesh_uvs=uvs, mesh_faces=faces, canonical_vertices=verts_canon,
        control_idx=control_idx, bbox=bbox, heldout_view=v - 1,
        region_uv=(0.0, 0.15, 1.0, 0.85))

    if out_dir is not None:
        save_scene(out_dir, ds)
        gt = os.path.join(out_dir, "gt")
        os.makedirs(gt, exist_ok=True)
        from .scene import save_rig_text
        save_rig_text(os.path.join(gt, "rig.txt"), rig)
        tex = rasterize_texture(spec.tex_res)
        save_png(os.path.join(gt, "texture.png"), tex)
        save_raw_f32(os.path.join(gt, "texture.f32"), tex)
        with open(os.path.join(gt, "spec.toml"), "w") as fh:
            for key, val in vars(spec).items():
                if isinstance(val, tuple):
                    fh.write(f"{key} = [{', '.join(str(x) for x in val)}]\n")
                elif isinstance(val, str):
                    fh.write(f'{key} = "{val}"\n')
                else:
                    fh.write(f"{key} = {val}\n")
            fh.write(f"seed = {seed}\n")
        ds.gt_dir = gt
    return ds, rig


def load_spec_toml(path: str) -> tuple[SyntheticSpec, int]:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as f:
        data = tomllib.load(f)
    seed = int(data.pop("seed", 0))
    spec = SyntheticSpec()
    for key, val in data.items():
        if not hasattr(spec, key):
            raise KeyError(f"unknown synthetic spec key {key!r}")
        if isinstance(getattr(spec, key), tuple):
            val = tuple(val)
        setattr(spec, key, val)
    return spec, seed
