"""Two-stage optimization driver.

Each iteration renders a random ray batch from one (frame, view) pair,
assembles the weighted objective over both sampling branches, backpropagates
once, and steps the field and rig stores with Adam. Stage one pins the
appearance latent to frame 0 so the explicit texture absorbs the shared
color; at the switch the frame-0 appearance row is copied into every frame
and the per-frame latents take over the residual.

Given a seed the whole schedule is deterministic: batch selection comes from
one generator, per-ray sample jitter from the counter RNG keyed by
(iteration-derived seed, frame, view, pixel).
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import replace

import numpy as np

from . import losses
from .appearance import sparsity_loss
from .autodiff import Tape
from .config import ModelConfig, TrainConfig
from .deform import init_rig
from .metrics import psnr
from .model import BRANCHES, SceneModel
from .optim import adam_step, lr_exp_decay
from .render import render_rays, render_image_model
from .rng import hash_key
from .scene import SceneDataset

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "total", "mse", "uv", "cycle", "angle",
               "sparsity", "semantic", "lambda_uv", "lr", "psnr_probe")


def build_model(dataset: SceneDataset, cfg: ModelConfig, seed: int = 0) -> SceneModel:
    """Model sized to the dataset: frame count and bounds come from the data,
    the rig from per-frame rigid alignment of the tracked mesh."""
    cfg = replace(cfg, frames=dataset.frames,
                  bbox_lo=tuple(float(x) for x in dataset.bbox[0]),
                  bbox_hi=tuple(float(x) for x in dataset.bbox[1]))
    rig = init_rig(dataset.mesh_vertices, dataset.control_idx,
                   dataset.canonical_vertices)
    return SceneModel.create(cfg, rig, seed)


def release_appearance_pin(model: SceneModel) -> None:
    """Copy the frame-0 appearance latent into every frame (stage switch)."""
    for br in BRANCHES:
        tab = model.store.blocks[f"time_app.{br}"]
        tab[1:] = tab[0]


def _probe_psnr(model: SceneModel, dataset: SceneDataset, tcfg: TrainConfig) -> float:
    v = dataset.heldout_view
    c, _ = render_image_model(model, dataset.cameras[v], 0,
                              n_coarse=tcfg.n_coarse, n_fine=tcfg.n_fine,
                              seed=tcfg.seed, view=v)
    return psnr(dataset.images[0, v], c)


class TrainLogger:
    def __init__(self, path: "str | None"):
        self.rows: list[dict] = []
        self.fh = None
        if path is not None:
            self.fh = open(path, "w")
            self.fh.write("\t".join(LOG_COLUMNS) + "\n")

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self.fh is not None:
            self.fh.write("\t".join(
                "" if row.get(c) is None else
                (str(row[c]) if c == "iteration" else f"{row[c]:.6g}")
                for c in LOG_COLUMNS) + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()
            self.fh = None


def train_step(model: SceneModel, dataset: SceneDataset, tcfg: TrainConfig,
               k: int, rng: np.random.Generator) -> dict:
    """One optimization iteration; returns the unweighted loss breakdown."""
    H, W = dataset.images.shape[2:4]
    n_pix = H * W
    tviews = dataset.train_views
    pinned = k < tcfg.stage_switch

    t = int(rng.integers(dataset.frames))
    v = int(tviews[int(rng.integers(len(tviews)))])
    ids = rng.choice(n_pix, size=min(tcfg.batch_rays, n_pix), replace=False)
    py, px = ids // W, ids % W
    o, d = dataset.cameras[v].rays(np.stack([px, py], axis=-1))
    c_gt = dataset.images[t, v, py, px]
    a_gt = dataset.masks[t, v, py, px]

    # Fresh jitter on every revisit of a pixel: the per-ray streams are keyed
    # by an iteration-derived seed so the schedule stays reproducible.
    it_seed = int(hash_key(tcfg.seed, k) >> 1)

    tape = Tape()
    res = render_rays(tape, model, o, d, t, n_coarse=tcfg.n_coarse,
                      n_fine=tcfg.n_fine, seed=it_seed, view=v,
                      pixel_ids=ids, pinned=pinned)

    parts: dict = {}
    parts["mse"] = (losses.mse_mask_loss(res.c, res.alpha, c_gt, a_gt)
                    + losses.mse_mask_loss(res.c_coarse, res.alpha_coarse,
                                           c_gt, a_gt))

    lam_uv = losses.uv_weight(k, tcfg.uv_tau())
    n_verts = dataset.mesh_uvs.shape[0]
    sub = rng.choice(n_verts, size=min(tcfg.uv_vertex_subset, n_verts),
                     replace=False)
    uv_term = None
    verts = tape.constant(dataset.mesh_vertices[t][sub])
    for br in BRANCHES:
        u_pred, _ = model.eval_geometry(tape, verts, t, br)
        term = losses.uv_loss(u_pred, dataset.mesh_uvs[sub])
        uv_term = term if uv_term is None else uv_term + term
    parts["uv"] = uv_term

    cyc = ang = None
    if res.hit_idx.size:
        qual = np.nonzero(res.alpha_value[res.hit_idx] > tcfg.alpha_floor)[0]
        if qual.size:
            for br in BRANCHES:
                x_obs, u_var, xc_var = res.max_points[br]
                u_q = u_var.take_rows(qual)
                xc_q = xc_var.take_rows(qual)
                x_inv = model.inverse_map(tape, u_q, t, br)
                cterm = losses.cycle_loss(xc_q.cast(model.store.dtype), x_inv)
                cyc = cterm if cyc is None else cyc + cterm
                _, _, gu, gv, gs = model.eval_geometry_jet(tape, x_obs[qual], t, br)
                aterm, _, _ = losses.angle_loss(gu, gv, gs)
                if aterm is not None:
                    ang = aterm if ang is None else ang + aterm
    parts["cycle"] = cyc
    parts["angle"] = ang
    parts["sparsity"] = sparsity_loss(res.residuals) if res.residuals is not None else None
    parts["semantic"] = losses.semantic_loss(tape, model.rig)

    weights = {"mse": 1.0, "uv": lam_uv, "cycle": tcfg.lambda_cycle,
               "angle": tcfg.lambda_angle, "sparsity": tcfg.lambda_sparsity,
               "semantic": tcfg.lambda_semantic}
    loss, breakdown = losses.total_loss(tape, parts, weights)
    tape.backward(loss)

    lr = lr_exp_decay(k, tcfg.iterations, tcfg.lr_start, tcfg.lr_end)
    adam_step(model.store, lr)
    adam_step(model.rig.store, lr)
    model.rig.renormalize()

    row = dict(breakdown.parts)
    row["total"] = float(np.asarray(loss.value))
    row["lambda_uv"] = lam_uv
    row["lr"] = lr
    return row


def warmup_uv(model: SceneModel, dataset: SceneDataset, tcfg: TrainConfig) -> None:
    """Pre-fit the UV head to the tracked-mesh atlas before the main loop.

    The decaying uv guidance cannot re-shear the field late in a run: once
    the texture has baked against whatever gauge the random init produced,
    the photometric term locks it in. Fitting the vertex anchors first
    starts the run in the atlas gauge instead. Only the field trains here
    (the rig keeps its least-squares init); optimizer state is cleared
    afterward so the main loop sees a fresh Adam.
    """
    rng = np.random.default_rng(hash_key(tcfg.seed, 0xA71A5) >> 1)
    n_verts = dataset.mesh_uvs.shape[0]
    for _ in range(tcfg.uv_warmup_iters):
        t = int(rng.integers(dataset.frames))
        sub = rng.choice(n_verts, size=min(tcfg.uv_vertex_subset, n_verts),
                         replace=False)
        tape = Tape()
        verts = tape.constant(dataset.mesh_vertices[t][sub])
        term = None
        for br in BRANCHES:
            u_pred, _ = model.eval_geometry(tape, verts, t, br)
            L = losses.uv_loss(u_pred, dataset.mesh_uvs[sub])
            term = L if term is None else term + L
        tape.backward(term)
        adam_step(model.store, tcfg.uv_warmup_lr)
        model.rig.store.zero_grad()
    store = model.store
    store.zero_grad()
    for name in store.blocks:
        store.m[name][...] = 0.0
        store.v[name][...] = 0.0
    store.step = 0


def train_model(dataset: SceneDataset, mcfg: ModelConfig, tcfg: TrainConfig,
                out_dir: "str | None" = None, verbose: bool = True) -> SceneModel:
    """Full training run; returns the trained model.

    With an ``out_dir``: writes train_log.tsv, periodic checkpoint files and
    the final model.tvck. iterations=0 yields the initialized model (after
    the UV warm-up, which counts as initialization).
    """
    model = build_model(dataset, mcfg, tcfg.seed)
    if tcfg.uv_warmup_iters > 0:
        warmup_uv(model, dataset, tcfg)
    return train_existing(model, dataset, tcfg, out_dir, verbose)


def train_existing(model: SceneModel, dataset: SceneDataset, tcfg: TrainConfig,
                   out_dir: "str | None" = None, verbose: bool = True) -> SceneModel:
    rng = np.random.default_rng(tcfg.seed)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    logger = TrainLogger(os.path.join(out_dir, "train_log.tsv") if out_dir else None)
    t0 = time.time()
    try:
        for k in range(tcfg.iterations):
            if k == tcfg.stage_switch:
                release_appearance_pin(model)
                if verbose:
                    log.info("iteration %d: appearance latents released", k)
            row = train_step(model, dataset, tcfg, k, rng)
            row["iteration"] = k
            probed = (tcfg.probe_every > 0 and (k + 1) % tcfg.probe_every == 0
                      and 0 <= dataset.heldout_view < dataset.views)
            if probed:
                row["psnr_probe"] = _probe_psnr(model, dataset, tcfg)
            if tcfg.log_every > 0 and (k % tcfg.log_every == 0 or probed
                                       or k == tcfg.iterations - 1):
                logger.write(row)
                if verbose:
                    log.info("iter %6d total %.4f mse %.4f%s [%.1fs]",
                             k, row["total"], row["mse"],
                             "" if not probed else f" psnr {row['psnr_probe']:.2f}",
                             time.time() - t0)
            if (out_dir and tcfg.checkpoint_every > 0
                    and (k + 1) % tcfg.checkpoint_every == 0
                    and k + 1 < tcfg.iterations):
                model.save(os.path.join(out_dir, f"checkpoint_{k + 1:06d}.tvck"), tcfg)
    finally:
        logger.close()
    if out_dir:
        model.save(os.path.join(out_dir, "model.tvck"), tcfg)
    return model
