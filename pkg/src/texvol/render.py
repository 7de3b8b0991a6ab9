"""Differentiable volume rendering.

Pipeline per ray: intersect the scene box, lay down stratified coarse depths,
composite the coarse field, importance-sample the coarse weights, merge and
sort, composite the fine field. Sample depths are constants on the tape
(draws are not differentiated through); densities and colors are recorded.

Rays that miss the box contribute (0, 0) and are excluded from field
evaluation entirely.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import rng as crng
from .autodiff import Tape, Var

log = logging.getLogger(__name__)


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rot: np.ndarray     # (3,3) world-from-camera
    center: np.ndarray  # camera position in world space

    def __post_init__(self):
        self.rot = np.asarray(self.rot, dtype=np.float64)
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def rays(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (N,2) as (px, py) -> origins, unit directions.

        Pixel (px, py) means the center of that pixel: the ray passes through
        ((px + 0.5 - cx)/fx, (py + 0.5 - cy)/fy, 1) in camera space.
        """
        p = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d_cam = np.stack([(p[:, 0] + 0.5 - self.cx) / self.fx,
                          (p[:, 1] + 0.5 - self.cy) / self.fy,
                          np.ones(p.shape[0])], axis=-1)
        d = d_cam @ self.rot.T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.broadcast_to(self.center, d.shape).copy()
        return o, d

    def project(self, x: np.ndarray) -> np.ndarray:
        """World points (N,3) -> pixel coordinates (N,2)."""
        xc = (np.atleast_2d(x) - self.center) @ self.rot
        return np.stack([self.fx * xc[:, 0] / xc[:, 2] + self.cx - 0.5,
                         self.fy * xc[:, 1] / xc[:, 2] + self.cy - 0.5], axis=-1)


def aabb_clip(origins: np.ndarray, dirs: np.ndarray, box: np.ndarray):
    """Slab intersection: (t_near, t_far, hit) per ray; misses behind the
    origin are rejected, origins inside the box clip t_near to 0."""
    lo, hi = box
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    # Parallel rays: the slab test degenerates to an inside/outside check.
    # The mask applies after sorting the pair, otherwise an outside-parallel
    # axis (entry +inf, exit -inf) would be re-sorted into "always inside".
    par = dirs == 0.0
    inside = (origins >= lo) & (origins <= hi)
    near = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
    far = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
    tn = np.maximum(near.max(axis=-1), 0.0)
    tf = far.min(axis=-1)
    hit = tf > tn
    return tn, tf, hit


def stratified_samples(t_near, t_far, n: int, u: np.ndarray) -> np.ndarray:
    """One uniform per equal bin; u has shape (..., n) in [0,1)."""
    t_near = np.asarray(t_near, dtype=np.float64)[..., None]
    t_far = np.asarray(t_far, dtype=np.float64)[..., None]
    edges = np.arange(n, dtype=np.float64)
    return t_near + (edges + u) * (t_far - t_near) / n


def importance_samples(weights: np.ndarray, edges: np.ndarray, n: int,
                       u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws from the piecewise-constant density over depth bins.

    weights (K,) >= 0 against bin edges (K+1,); u (n,) uniforms. All-zero
    weights fall back to stratified sampling over the full range (logged).
    """
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0.0:
        log.info("importance sampling fallback: all-zero weights")
        return stratified_samples(edges[0], edges[-1], n, u)
    cdf = np.concatenate([[0.0], np.cumsum(w / total)])
    cdf[-1] = 1.0
    idx = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, w.size - 1)
    lo = cdf[idx]
    span = cdf[idx + 1] - lo
    frac = np.where(span > 0, (u - lo) / np.where(span > 0, span, 1.0), 0.0)
    return edges[idx] + frac * (edges[idx + 1] - edges[idx])


def composite(tape: Tape, sigma: Var, color: Var, deltas: np.ndarray):
    """Transmittance-weighted compositing over samples.

    sigma (N,S), color (N,S,3), deltas (N,S) constant spacings. Returns
    (c_hat (N,3), alpha (N,), weights (N,S), argmax (N,)).
    """
    n, s = sigma.shape
    tau = sigma * deltas
    excl = tau.cumsum(axis=1) - tau          # optical depth before sample i
    trans = (-excl).exp()
    absorb = 1.0 - (-tau).exp()
    w = trans * absorb
    c_hat = (w.reshape(n, s, 1) * color).sum(axis=1)
    alpha = w.sum(axis=1)
    argmax = np.argmax(w.value, axis=1)
    return c_hat, alpha, w, argmax


def composite_np(sigma: np.ndarray, color: np.ndarray, deltas: np.ndarray):
    """Plain-array twin of composite (ground truth and oracles)."""
    tau = sigma * deltas
    excl = np.cumsum(tau, axis=1) - tau
    w = np.exp(-excl) * (1.0 - np.exp(-tau))
    c_hat = (w[..., None] * color).sum(axis=1)
    return c_hat, w.sum(axis=1), w, np.argmax(w, axis=1)


def deltas_from_depths(depths: np.ndarray, t_far: np.ndarray) -> np.ndarray:
    """Forward differences, closing the last interval at the box exit."""
    d = np.diff(depths, axis=-1)
    last = np.asarray(t_far)[..., None] - depths[..., -1:]
    return np.concatenate([d, np.maximum(last, 0.0)], axis=-1)


def ray_uniforms(seed: int, frame: int, view: int, pixel_index: int,
                 stream: int, n: int) -> np.ndarray:
    key = crng.hash_key(seed, frame, view, pixel_index)
    return crng.uniforms(key, stream, n)


STREAM_COARSE = 1
STREAM_FINE = 2


def ray_uniform_batch(seed: int, frame: int, view: int, pixel_ids: np.ndarray,
                      stream: int, n: int) -> np.ndarray:
    keys = crng.hash_keys(seed, frame, view, np.asarray(pixel_ids, dtype=np.int64))
    return crng.uniforms_batch(keys, stream, n)


def sample_depths(seed: int, frame: int, view: int, pixel_ids: np.ndarray,
                  tn: np.ndarray, tf: np.ndarray, n_coarse: int) -> np.ndarray:
    """Stratified coarse depths per ray, driven by the counter RNG."""
    u = ray_uniform_batch(seed, frame, view, pixel_ids, STREAM_COARSE, n_coarse)
    return stratified_samples(tn, tf, n_coarse, u)


def importance_samples_batch(weights: np.ndarray, edges: np.ndarray, n: int,
                             u: np.ndarray) -> np.ndarray:
    """Row-parallel importance_samples: weights (R,K), edges (R,K+1), u (R,n).

    Arithmetic matches the per-row routine bit for bit; all-zero rows fall
    back to stratified sampling over their full range.
    """
    w = np.asarray(weights, dtype=np.float64)
    totals = w.sum(axis=1)
    bad = totals <= 0.0
    safe = np.where(bad, 1.0, totals)
    cdf = np.concatenate([np.zeros((w.shape[0], 1)),
                          np.cumsum(w / safe[:, None], axis=1)], axis=1)
    cdf[:, -1] = 1.0
    # count(cdf <= u) reproduces searchsorted(cdf, u, side="right") per row
    cnt = (cdf[:, None, :] <= u[:, :, None]).sum(axis=2)
    idx = np.clip(cnt - 1, 0, w.shape[1] - 1)
    lo = np.take_along_axis(cdf, idx, 1)
    span = np.take_along_axis(cdf, idx + 1, 1) - lo
    frac = np.where(span > 0, (u - lo) / np.where(span > 0, span, 1.0), 0.0)
    e0 = np.take_along_axis(edges, idx, 1)
    e1 = np.take_along_axis(edges, idx + 1, 1)
    out = e0 + frac * (e1 - e0)
    if np.any(bad):
        log.info("importance sampling fallback: all-zero weights")
        out[bad] = stratified_samples(edges[bad, 0], edges[bad, -1], n, u[bad])
    return out


def fine_depths(seed: int, frame: int, view: int, pixel_ids: np.ndarray,
                coarse_w: np.ndarray, coarse_depths: np.ndarray,
                tn: np.ndarray, tf: np.ndarray, n_fine: int) -> np.ndarray:
    """Importance draws merged with the coarse depths, sorted per ray.

    Bin edges span [t_near, midpoints, t_far] around the coarse depths.
    """
    mids = 0.5 * (coarse_depths[:, 1:] + coarse_depths[:, :-1])
    edges = np.concatenate([np.asarray(tn)[:, None], mids,
                            np.asarray(tf)[:, None]], axis=1)
    u = ray_uniform_batch(seed, frame, view, pixel_ids, STREAM_FINE, n_fine)
    extra = importance_samples_batch(coarse_w, edges, n_fine, u)
    return np.sort(np.concatenate([coarse_depths, extra], axis=1), axis=1)


def scatter_rows(tape: Tape, x: Var, idx: np.ndarray, total: int) -> Var:
    """Place rows of x (N,d) at positions idx of a zero (total,d) output."""
    sel = np.zeros((total, x.shape[0]), dtype=x.value.dtype)
    sel[np.asarray(idx, dtype=np.int64), np.arange(x.shape[0])] = 1.0
    flat = x if len(x.shape) == 2 else x.reshape(-1, 1)
    out = tape.constant(sel) @ flat
    return out if len(x.shape) == 2 else out.reshape(-1)


class RenderResult:
    """Per-batch render outputs; Vars where gradients matter.

    c / alpha cover the full input batch (misses contribute zeros). Aux
    fields cover hit rays only, indexed by ``hit_idx``.
    """

    def __init__(self):
        self.c = None                 # (B,3) Var, fine branch
        self.alpha = None             # (B,) Var
        self.c_coarse = None          # (B,3) Var
        self.alpha_coarse = None      # (B,) Var
        self.hit_idx = None           # (Nh,) int
        self.alpha_value = None       # (B,) numpy snapshot of alpha
        self.residuals = None         # (M,3) Var, both branches' T_I outputs
        # per-branch max-contribution data over hit rays:
        #   x_obs (Nh,3) const, u (Nh,2) Var, xc (Nh,3) Var
        self.max_points = {}


def render_rays(tape: Tape, model, origins: np.ndarray, dirs: np.ndarray,
                t: int, *, n_coarse: int, n_fine: int, seed: int, view: int,
                pixel_ids: np.ndarray, pinned: bool = False,
                rng_frame: "int | None" = None) -> RenderResult:
    """Coarse+fine differentiable render of a ray batch at frame t.

    ``rng_frame`` overrides the frame fed to the sample RNG so static scenes
    can be rendered with identical jitter across frames.
    """
    from .autodiff import concat

    key_t = t if rng_frame is None else rng_frame

    res = RenderResult()
    box = model.cfg.box()
    total = origins.shape[0]
    tn, tf, hit = aabb_clip(origins, dirs, box)
    res.hit_idx = np.nonzero(hit)[0]
    if res.hit_idx.size == 0:
        dt = model.store.dtype
        res.c = tape.constant(np.zeros((total, 3), dtype=dt))
        res.alpha = tape.constant(np.zeros(total, dtype=dt))
        res.c_coarse, res.alpha_coarse = res.c, res.alpha
        res.alpha_value = np.zeros(total)
        return res

    o = origins[hit]
    d = dirs[hit]
    tn, tf = tn[hit], tf[hit]
    ids = np.asarray(pixel_ids)[hit]
    nh = o.shape[0]

    depths_c = sample_depths(seed, key_t, view, ids, tn, tf, n_coarse)
    coarse = _run_branch(tape, model, "coarse", o, d, t, depths_c, tf, pinned)

    depths_f = fine_depths(seed, key_t, view, ids, coarse.w.value, depths_c, tn, tf,
                           n_fine)
    fine = _run_branch(tape, model, "fine", o, d, t, depths_f, tf, pinned)

    for branch, out, depths in (("coarse", coarse, depths_c), ("fine", fine, depths_f)):
        s = depths.shape[1]
        gather = np.arange(nh) * s + out.argmax
        res.max_points[branch] = (out.pts.reshape(nh * s, 3)[gather],
                                  out.u.take_rows(gather),
                                  out.xc.take_rows(gather))

    res.c = scatter_rows(tape, fine.chat, res.hit_idx, total)
    res.alpha = scatter_rows(tape, fine.alpha, res.hit_idx, total)
    res.c_coarse = scatter_rows(tape, coarse.chat, res.hit_idx, total)
    res.alpha_coarse = scatter_rows(tape, coarse.alpha, res.hit_idx, total)
    res.alpha_value = res.alpha.value.copy()
    res.residuals = concat([coarse.resid, fine.resid], axis=0)
    return res


class _BranchOut:
    __slots__ = ("chat", "alpha", "w", "argmax", "pts", "xc", "u", "resid")


def _run_branch(tape: Tape, model, branch: str, o, d, t, depths, tf,
                pinned) -> _BranchOut:
    """Evaluate one branch at all sample points and composite.

    Keeps the deformed positions and per-sample UVs on the tape so losses can
    gather them at max-contribution indices without re-evaluating.
    """
    from .appearance import texture_lookup

    out = _BranchOut()
    dt = model.store.dtype
    nh, s = depths.shape
    out.pts = o[:, None, :] + depths[..., None] * d[:, None, :]
    flat = out.pts.reshape(nh * s, 3)
    out.xc = model.rig.deform(tape, tape.constant(flat), t)
    out.u, sigma = model.eval_canonical(tape, out.xc, t, branch)
    d_rep = np.repeat(d, s, axis=0).astype(dt)
    out.resid = model.residual(tape, out.u, tape.constant(d_rep), t, branch, pinned)
    override = getattr(model, "texture_override", None)
    if override is not None:
        base = override(tape, out.u)
    else:
        base = texture_lookup(tape, model.texture_var(tape), out.u)
    color = base * out.resid.exp()
    deltas = deltas_from_depths(depths, tf).astype(dt)
    out.chat, out.alpha, out.w, out.argmax = composite(
        tape, sigma.reshape(nh, s), color.reshape(nh, s, 3), deltas)
    return out


def render_rays_np(density_color, origins: np.ndarray, dirs: np.ndarray,
                   t: int, box: np.ndarray, *, n_coarse: int, n_fine: int,
                   seed: int, view: int, pixel_ids: np.ndarray,
                   rng_frame: "int | None" = None):
    """Non-differentiable twin of render_rays for analytic fields.

    ``density_color(x, d, t) -> (sigma (N,), rgb (N,3))`` supplies the scene.
    Used for ground-truth generation and rendering oracles; the sampling
    streams match render_rays. ``rng_frame`` overrides the frame fed to the
    sample RNG (ground-truth generation pins it so static scenes render
    identically across frames); n_fine=0 skips the importance pass.
    """
    key_t = t if rng_frame is None else rng_frame
    total = origins.shape[0]
    c_out = np.zeros((total, 3))
    a_out = np.zeros(total)
    tn, tf, hit = aabb_clip(origins, dirs, box)
    if not np.any(hit):
        return c_out, a_out
    o, d = origins[hit], dirs[hit]
    tn, tf = tn[hit], tf[hit]
    ids = np.asarray(pixel_ids)[hit]

    def run(depths):
        n, s = depths.shape
        pts = (o[:, None, :] + depths[..., None] * d[:, None, :]).reshape(-1, 3)
        sig, rgb = density_color(pts, np.repeat(d, s, axis=0), t)
        return composite_np(sig.reshape(n, s), rgb.reshape(n, s, 3),
                            deltas_from_depths(depths, tf))

    depths = sample_depths(seed, key_t, view, ids, tn, tf, n_coarse)
    if n_fine > 0:
        _, _, w_c, _ = run(depths)
        depths = fine_depths(seed, key_t, view, ids, w_c, depths, tn, tf, n_fine)
    chat, alpha, _, _ = run(depths)
    c_out[hit] = chat
    a_out[hit] = alpha
    return c_out, a_out


def image_pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """All pixel (px, py) coordinates and flat ids, row-major."""
    py, px = np.mgrid[0:height, 0:width]
    pixels = np.stack([px.ravel(), py.ravel()], axis=-1)
    return pixels, np.arange(width * height)


def render_image_np(density_color, cam: Camera, t: int, box: np.ndarray, *,
                    n_coarse: int, n_fine: int, seed: int, view: int,
                    chunk: int = 4096, rng_frame: "int | None" = None):
    """Full-frame analytic render -> (H,W,3) color and (H,W) alpha."""
    pixels, ids = image_pixel_grid(cam.width, cam.height)
    o, d = cam.rays(pixels)
    c = np.zeros((ids.size, 3))
    a = np.zeros(ids.size)
    for k in range(0, ids.size, chunk):
        sl = slice(k, k + chunk)
        c[sl], a[sl] = render_rays_np(density_color, o[sl], d[sl], t, box,
                                      n_coarse=n_coarse, n_fine=n_fine,
                                      seed=seed, view=view, pixel_ids=ids[sl],
                                      rng_frame=rng_frame)
    return c.reshape(cam.height, cam.width, 3), a.reshape(cam.height, cam.width)


def render_image_model(model, cam: Camera, t: int, *, n_coarse: int,
                       n_fine: int, seed: int, view: int, chunk: int = 1024,
                       pinned: bool = False, rng_frame: "int | None" = None):
    """Full-frame model render (no gradients kept) -> color, alpha images."""
    from .autodiff import Tape

    pixels, ids = image_pixel_grid(cam.width, cam.height)
    o, d = cam.rays(pixels)
    c = np.zeros((ids.size, 3))
    a = np.zeros(ids.size)
    for k in range(0, ids.size, chunk):
        sl = slice(k, k + chunk)
        res = render_rays(Tape(), model, o[sl], d[sl], t, n_coarse=n_coarse,
                          n_fine=n_fine, seed=seed, view=view,
                          pixel_ids=ids[sl], pinned=pinned, rng_frame=rng_frame)
        c[sl] = res.c.value
        a[sl] = res.alpha.value
    return c.reshape(cam.height, cam.width, 3), a.reshape(cam.height, cam.width)
