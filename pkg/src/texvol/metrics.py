"""Reconstruction and editability metrics.

PSNR assumes images in [0,1]. SSIM converts color to luma and uses the
standard 11x11 Gaussian window (sigma 1.5, K1=0.01, K2=0.03); images smaller
than the window fall back to a single global window. The texture-stability
score (astd) is the per-texel per-channel population standard deviation
across frames, averaged over a region mask and scaled to 8-bit units.
Angle-error maps evaluate the conformality cosine at each foreground ray's
max-contribution point, matching the training loss pointwise.
"""
from __future__ import annotations

import os

import numpy as np

from .autodiff import Tape
from .render import image_pixel_grid, render_rays, render_image_model

LUMA = np.array([0.299, 0.587, 0.114])
CHECKER_A = np.array([1.0, 1.0, 1.0])
CHECKER_B = np.array([0.2, 0.2, 0.2])


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ LUMA
    if img.ndim == 2:
        return img
    raise ValueError(f"expected (H,W) or (H,W,3) image, got {img.shape}")


# -- image metrics -------------------------------------------------------------


def psnr(a: np.ndarray, b: np.ndarray, mask: "np.ndarray | None" = None) -> float:
    """10*log10(1/MSE) over (optionally masked) pixels; identical -> +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("psnr requires equal shapes")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("psnr mask selects no pixels")
        a, b = a[mask], b[mask]
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _gaussian1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 2D correlation, valid region only."""
    from scipy.ndimage import convolve1d

    pad = g.size // 2
    out = convolve1d(img, g, axis=0, mode="constant")
    out = convolve1d(out, g, axis=1, mode="constant")
    return out[pad:-pad, pad:-pad]


def _ssim_terms(mx, my, mxx, myy, mxy, c1, c2):
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    return ((2 * mx * my + c1) * (2 * cov + c2)
            / ((mx * mx + my * my + c1) * (vx + vy + c2)))


def ssim(a: np.ndarray, b: np.ndarray, *, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03,
         mask: "np.ndarray | None" = None) -> float:
    """Mean structural similarity on luma, data range 1.

    With a mask (or an image smaller than the window) the statistics are
    global over the selected pixels instead of windowed.
    """
    x = to_luma(a)
    y = to_luma(b)
    if x.shape != y.shape:
        raise ValueError("ssim requires equal shapes")
    c1, c2 = k1 ** 2, k2 ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("ssim mask selects no pixels")
        x, y = x[mask], y[mask]
    if mask is not None or min(x.shape[:2]) < window:
        mx, my = x.mean(), y.mean()
        return float(_ssim_terms(mx, my, (x * x).mean(), (y * y).mean(),
                                 (x * y).mean(), c1, c2))
    g = _gaussian1d(window, sigma)
    mx = _filter_valid(x, g)
    my = _filter_valid(y, g)
    mxx = _filter_valid(x * x, g)
    myy = _filter_valid(y * y, g)
    mxy = _filter_valid(x * y, g)
    return float(_ssim_terms(mx, my, mxx, myy, mxy, c1, c2).mean())


def astd(textures: np.ndarray, mask: "np.ndarray | None" = None) -> float:
    """Mean across-frame standard deviation in 8-bit units.

    textures: (F,H,W,3) or (F,H,W) in [0,1]; mask: (H,W) selecting the
    texels to average (all when omitted). Population convention (divide by
    F, not F-1).
    """
    seq = np.asarray(textures, dtype=np.float64)
    if seq.ndim not in (3, 4):
        raise ValueError(f"expected (F,H,W[,C]) sequence, got {seq.shape}")
    if seq.shape[0] < 2:
        raise ValueError("astd needs at least two frames")
    std = seq.std(axis=0, ddof=0)
    if mask is None:
        sel = std
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != std.shape[:2]:
            raise ValueError("mask shape does not match texture resolution")
        if not mask.any():
            raise ValueError("astd mask selects no texels")
        sel = std[mask]
    return float(sel.mean() * 255.0)


# -- angle error ---------------------------------------------------------------


def angle_cosines(gu: np.ndarray, gv: np.ndarray, gs: np.ndarray,
                  floor: float = 1e-8) -> np.ndarray:
    """Per-point conformality cosines; NaN where gradients are degenerate.

    Mirrors the training penalty: project UV gradients onto the plane normal
    to the density gradient, take |cos| of the projected pair.
    """
    gu = np.asarray(gu, dtype=np.float64)
    gv = np.asarray(gv, dtype=np.float64)
    gs = np.asarray(gs, dtype=np.float64)
    out = np.full(gu.shape[0], np.nan)
    nu = np.linalg.norm(gu, axis=-1)
    nv = np.linalg.norm(gv, axis=-1)
    ns = np.linalg.norm(gs, axis=-1)
    keep = (nu > floor) & (nv > floor) & (ns > floor)
    if not keep.any():
        return out
    gu, gv, gs = gu[keep], gv[keep], gs[keep]
    n = gs / np.linalg.norm(gs, axis=-1, keepdims=True)
    pu = gu - (gu * n).sum(axis=-1, keepdims=True) * n
    pv = gv - (gv * n).sum(axis=-1, keepdims=True) * n
    npu = np.linalg.norm(pu, axis=-1)
    npv = np.linalg.norm(pv, axis=-1)
    ok = (npu > floor) & (npv > floor)
    cos = np.full(pu.shape[0], np.nan)
    cos[ok] = np.abs((pu[ok] * pv[ok]).sum(axis=-1)) / (npu[ok] * npv[ok])
    out[np.nonzero(keep)[0]] = cos
    return out


def view_diagnostics(model, cam, t: int, *, n_coarse: int, n_fine: int,
                     seed: int, view: int, branch: str = "fine",
                     alpha_floor: float = 0.5, chunk: int = 1024,
                     rng_frame: "int | None" = None) -> dict:
    """Render one view and evaluate per-pixel surface diagnostics.

    Returns color (H,W,3), alpha (H,W), uv (H,W,2), angle (H,W) and
    cycle (H,W); the last three are NaN off the qualifying foreground
    (alpha below the floor or ray missed the box).
    """
    h, w = cam.height, cam.width
    pixels, ids = image_pixel_grid(w, h)
    o, d = cam.rays(pixels)
    color = np.zeros((ids.size, 3))
    alpha = np.zeros(ids.size)
    uv = np.full((ids.size, 2), np.nan)
    angle = np.full(ids.size, np.nan)
    cycle = np.full(ids.size, np.nan)
    for k in range(0, ids.size, chunk):
        sl = slice(k, min(k + chunk, ids.size))
        res = render_rays(Tape(), model, o[sl], d[sl], t, n_coarse=n_coarse,
                          n_fine=n_fine, seed=seed, view=view,
                          pixel_ids=ids[sl], rng_frame=rng_frame)
        color[sl] = res.c.value
        alpha[sl] = res.alpha.value
        if res.hit_idx.size == 0:
            continue
        qual = np.nonzero(res.alpha_value[res.hit_idx] > alpha_floor)[0]
        if qual.size == 0:
            continue
        rows = k + res.hit_idx[qual]
        x_obs, u_var, xc_var = res.max_points[branch]
        uv[rows] = np.asarray(u_var.value, dtype=np.float64)[qual]
        tape = Tape()
        _, _, gu, gv, gs = model.eval_geometry_jet(tape, x_obs[qual], t, branch)
        angle[rows] = angle_cosines(gu.value, gv.value, gs.value)
        x_inv = model.inverse_map(tape, u_var.take_rows(qual), t, branch)
        err = np.asarray(xc_var.value, dtype=np.float64)[qual] - np.asarray(
            x_inv.value, dtype=np.float64)
        cycle[rows] = np.linalg.norm(err, axis=-1)
    return {
        "color": color.reshape(h, w, 3),
        "alpha": alpha.reshape(h, w),
        "uv": uv.reshape(h, w, 2),
        "angle": angle.reshape(h, w),
        "cycle": cycle.reshape(h, w),
    }


def angle_error_map(model, cam, t: int, *, n_coarse: int, n_fine: int,
                    seed: int, view: int, branch: str = "fine",
                    alpha_floor: float = 0.5, chunk: int = 1024,
                    rng_frame: "int | None" = None):
    """(H,W) per-pixel conformality error (NaN off-surface) and its mean."""
    diag = view_diagnostics(model, cam, t, n_coarse=n_coarse, n_fine=n_fine,
                            seed=seed, view=view, branch=branch,
                            alpha_floor=alpha_floor, chunk=chunk,
                            rng_frame=rng_frame)
    amap = diag["angle"]
    valid = np.isfinite(amap)
    mean = float(amap[valid].mean()) if valid.any() else float("nan")
    return amap, mean


# -- checker overlay -----------------------------------------------------------


def checker_fn(period: int, color_a: np.ndarray = CHECKER_A,
               color_b: np.ndarray = CHECKER_B):
    """Procedural UV checker usable as a texture override. Cell parity at
    u=(0,0) is color A."""
    color_a = np.asarray(color_a, dtype=np.float64)
    color_b = np.asarray(color_b, dtype=np.float64)

    def fn(tape: Tape, u):
        uv = np.clip(np.asarray(u.value, dtype=np.float64), 0.0, np.nextafter(1.0, 0.0))
        cell = np.floor(uv * period).astype(np.int64)
        a_side = (cell.sum(axis=-1) % 2) == 0
        cols = np.where(a_side[:, None], color_a, color_b)
        return tape.constant(cols.astype(u.value.dtype))

    return fn


def uv_checker_overlay(model, cam, t: int, period: int, *, n_coarse: int,
                       n_fine: int, seed: int, view: int, chunk: int = 1024,
                       rng_frame: "int | None" = None) -> np.ndarray:
    """Render with the explicit texture swapped for a UV checker."""
    saved = model.texture_override
    model.texture_override = checker_fn(period)
    try:
        c, _ = render_image_model(model, cam, t, n_coarse=n_coarse,
                                  n_fine=n_fine, seed=seed, view=view,
                                  chunk=chunk, rng_frame=rng_frame)
    finally:
        model.texture_override = saved
    return c


# -- texture baking ------------------------------------------------------------


def bake_texture(model, t: int, *, height: "int | None" = None,
                 width: "int | None" = None, direction=(0.0, 0.0, 1.0),
                 branch: str = "fine", pinned: bool = False) -> np.ndarray:
    """Evaluate the effective texture on a texel-center UV grid at frame t.

    The view-dependent residual needs a direction; a fixed reference keeps
    frame-to-frame comparisons meaningful.
    """
    h = height if height is not None else model.cfg.tex_h
    w = width if width is not None else model.cfg.tex_w
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    grid = np.stack([(jj.ravel() + 0.5) / w, (ii.ravel() + 0.5) / h], axis=-1)
    d = np.broadcast_to(np.asarray(direction, dtype=np.float64), (h * w, 3))
    dt = model.store.dtype
    tape = Tape()
    out = model.radiance(tape, tape.constant(grid.astype(dt)),
                         tape.constant(np.ascontiguousarray(d, dtype=dt)),
                         t, branch, pinned)
    return np.asarray(out.value, dtype=np.float64).reshape(h, w, 3)


def region_texel_mask(height: int, width: int, region_uv) -> np.ndarray:
    """(H,W) mask of texel centers inside a (u0,v0,u1,v1) rectangle."""
    u0, v0, u1, v1 = region_uv
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    return ((v[:, None] >= v0) & (v[:, None] <= v1)
            & (u[None, :] >= u0) & (u[None, :] <= u1))


def uv_region_mask(uv_map: np.ndarray, region_uv) -> np.ndarray:
    """(H,W) mask of pixels whose surface UV falls in the rectangle."""
    u0, v0, u1, v1 = region_uv
    u, v = uv_map[..., 0], uv_map[..., 1]
    with np.errstate(invalid="ignore"):
        return (np.isfinite(u) & (u >= u0) & (u <= u1)
                & (v >= v0) & (v <= v1))


# -- report assembly -----------------------------------------------------------


def format_report(report: dict) -> str:
    lines = []
    for key, val in report.items():
        if isinstance(val, float):
            lines.append(f"{key}\t{val:.6g}")
        else:
            lines.append(f"{key}\t{val}")
    return "\n".join(lines) + "\n"


def save_report(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(report))


def compute_report(model, dataset, *, n_coarse: int = 32, n_fine: int = 32,
                   seed: int = 0, alpha_floor: float = 0.5,
                   views: "list[int] | None" = None,
                   out_dir: "str | None" = None, checker_period: int = 8,
                   branch: str = "fine", chunk: int = 1024) -> dict:
    """Per-view reconstruction metrics plus texture-stability scores.

    Defaults to the held-out view when the dataset names one, otherwise all
    views. Angle/cycle/region statistics are evaluated at max-contribution
    surface points of rays whose alpha clears the floor. With an out_dir the
    angle-error maps and checker overlays are written as PNGs and their
    paths included in the report.
    """
    from .scene import save_png

    if views is None:
        if 0 <= dataset.heldout_view < dataset.views:
            views = [dataset.heldout_view]
        else:
            views = list(range(dataset.views))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    report: dict = {}
    region = dataset.region_uv
    for v in views:
        cam = dataset.cameras[v]
        ps, ss, ps_r, ss_r, ang, cyc = [], [], [], [], [], []
        for t in range(dataset.frames):
            diag = view_diagnostics(model, cam, t, n_coarse=n_coarse,
                                    n_fine=n_fine, seed=seed, view=v,
                                    branch=branch, alpha_floor=alpha_floor,
                                    chunk=chunk)
            gt = dataset.images[t, v]
            ps.append(psnr(gt, diag["color"]))
            ss.append(ssim(gt, diag["color"]))
            rmask = uv_region_mask(diag["uv"], region)
            if rmask.any():
                ps_r.append(psnr(gt, diag["color"],
                                 mask=np.repeat(rmask[..., None], 3, axis=-1)))
                ss_r.append(ssim(gt, diag["color"], mask=rmask))
            avalid = np.isfinite(diag["angle"])
            if avalid.any():
                ang.append(float(diag["angle"][avalid].mean()))
            cvalid = np.isfinite(diag["cycle"])
            if cvalid.any():
                cyc.append(float(diag["cycle"][cvalid].mean()))
            if out_dir:
                amap = np.where(avalid, diag["angle"], 0.0)
                path = os.path.join(out_dir, f"angle_view{v}_frame{t}.png")
                save_png(path, amap, srgb=False)
                report[f"angle_map/view{v}/frame{t}"] = path
        report[f"psnr/view{v}"] = float(np.mean(ps))
        report[f"ssim/view{v}"] = float(np.mean(ss))
        if ps_r:
            report[f"psnr_region/view{v}"] = float(np.mean(ps_r))
            report[f"ssim_region/view{v}"] = float(np.mean(ss_r))
        report[f"angle/view{v}"] = float(np.mean(ang)) if ang else float("nan")
        report[f"cycle/view{v}"] = float(np.mean(cyc)) if cyc else float("nan")
        if out_dir:
            overlay = uv_checker_overlay(model, cam, 0, checker_period,
                                         n_coarse=n_coarse, n_fine=n_fine,
                                         seed=seed, view=v, chunk=chunk)
            path = os.path.join(out_dir, f"checker_view{v}.png")
            save_png(path, overlay)
            report[f"checker_map/view{v}"] = path

    if dataset.frames >= 2:
        baked = np.stack([bake_texture(model, t, branch=branch)
                          for t in range(dataset.frames)])
        report["astd"] = astd(baked)
        tmask = region_texel_mask(baked.shape[1], baked.shape[2], region)
        if tmask.any():
            report["astd_region"] = astd(baked, tmask)
    if out_dir:
        save_report(report, os.path.join(out_dir, "metrics.txt"))
    return report
