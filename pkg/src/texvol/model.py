"""Scene model: coarse/fine UV+density fields, inverse maps, hybrid texture.

Field weights live in one ParamStore, the deformation rig in its own (so rig
edits copy-on-write without duplicating network weights). The two renderer
branches ("coarse", "fine") have fully independent network parameters and
time tables; the explicit texture grid is shared, being the single editable
appearance artifact.

Geometry networks (UV+density, inverse map) share one time table per branch;
the texture residual has a separate per-branch table so the first training
stage can pin appearance to frame 0 without freezing geometry dynamics.
"""
from __future__ import annotations

import numpy as np

from . import checkpoint
from .autodiff import ParamStore, Tape, Var, concat
from .config import ModelConfig, TrainConfig, config_from_json, config_to_json
from .deform import Rig
from .jets import Jet, jconcat, lift, seed_points, spatial_gradient
from .nn import MlpSpec, embed_time, init_embedding, init_mlp, mlp_forward, pe_dim, pe_encode

BRANCHES = ("coarse", "fine")


class SceneModel:
    # Optional (tape, u) -> color hook; when set the renderer uses it in
    # place of the explicit texture lookup (checker overlays, diagnostics).
    texture_override = None

    def __init__(self, cfg: ModelConfig, store: ParamStore, rig: Rig):
        self.cfg = cfg
        self.store = store
        self.rig = rig
        self.box_canon = cfg.canonical_box()
        d = cfg.mlp_depth
        w = cfg.mlp_width
        s = cfg.mlp_skip
        self.spec_vi = MlpSpec(pe_dim(3, cfg.pe_pos) + cfg.time_dim, 3, d, w, s)
        self.spec_vinv = MlpSpec(pe_dim(2, cfg.pe_uv) + cfg.time_dim, 3, d, w, s)
        self.spec_ti = MlpSpec(pe_dim(2, cfg.pe_uv) + pe_dim(3, cfg.pe_dir) + cfg.time_dim,
                               3, d, w, s)
        # Normalization constants live in the field dtype; a float64 constant
        # on a float32 input would silently promote the whole network.
        lo, hi = self.box_canon
        dt = store.dtype
        self._canon_mid = ((lo + hi) / 2).astype(dt)
        self._canon_scale = (2.0 / (hi - lo)).astype(dt)
        self._inv_lo = lo.astype(dt)
        self._inv_span = (hi - lo).astype(dt)

    # -- construction ---------------------------------------------------------

    @staticmethod
    def create(cfg: ModelConfig, rig: Rig, seed: int = 0) -> "SceneModel":
        store = ParamStore(cfg.np_dtype())
        rng = np.random.default_rng(seed)
        model = SceneModel(cfg, store, rig)
        for br in BRANCHES:
            init_mlp(store, f"vi.{br}", model.spec_vi, rng)
            init_mlp(store, f"vinv.{br}", model.spec_vinv, rng)
            init_mlp(store, f"ti.{br}", model.spec_ti, rng)
            init_embedding(store, f"time_geo.{br}", cfg.frames, cfg.time_dim, rng)
            init_embedding(store, f"time_app.{br}", cfg.frames, cfg.time_dim, rng)
        store.add("tex", np.full((cfg.tex_h, cfg.tex_w, 3), 0.5))
        return model

    # -- geometry ---------------------------------------------------------------

    def _normalize_canonical(self, y):
        return (y - self._canon_mid) * self._canon_scale

    def eval_canonical(self, tape: Tape, y, t: int, branch: str):
        """Canonical points (N,3) -> (u (N,2), sigma (N,)); Var or Jet.

        Inputs are cast to the field dtype here: the rig stays float64 while
        networks may train in float32.
        """
        n = y.shape[0]
        y = y.cast(self.store.dtype)
        enc = pe_encode(self._normalize_canonical(y), self.cfg.pe_pos)
        emb = embed_time(tape, self.store, f"time_geo.{branch}", t, n=n)
        if isinstance(enc, Jet):
            emb = lift(emb, len(enc.tans))
            h = jconcat([enc, emb], axis=-1)
        else:
            h = concat([enc, emb], axis=-1)
        out = mlp_forward(tape, self.store, f"vi.{branch}", self.spec_vi, h)
        u = out.cols(0, 2).sigmoid()
        raw = out.col(2) + self.cfg.sigma_bias
        sigma = raw.softplus() * self.cfg.density_scale
        return u, sigma

    def eval_geometry(self, tape: Tape, x, t: int, branch: str):
        """Observation points -> (u, sigma): the deformation composed with
        the canonical field."""
        xc = self.rig.deform(tape, x, t)
        return self.eval_canonical(tape, xc, t, branch)

    def eval_geometry_jet(self, tape: Tape, x: np.ndarray, t: int, branch: str):
        """As eval_geometry but seeded with world-axis tangents: returns
        (u, sigma, grad_u (N,3), grad_v (N,3), grad_sigma (N,3)) where the
        gradient nodes stay differentiable w.r.t. parameters."""
        jx = seed_points(tape, x)
        u, sigma = self.eval_geometry(tape, jx, t, branch)
        gu = spatial_gradient(u.col(0))
        gv = spatial_gradient(u.col(1))
        gs = spatial_gradient(sigma)
        return u.val, sigma.val, gu, gv, gs

    def inverse_map(self, tape: Tape, u, t: int, branch: str):
        """UV (N,2) -> canonical point inside the expanded box (N,3)."""
        n = u.shape[0]
        enc = pe_encode(u, self.cfg.pe_uv)
        emb = embed_time(tape, self.store, f"time_geo.{branch}", t, n=n)
        h = concat([enc, emb], axis=-1)
        out = mlp_forward(tape, self.store, f"vinv.{branch}", self.spec_vinv, h)
        return out.sigmoid() * self._inv_span + self._inv_lo

    def density_gradient(self, tape: Tape, x: np.ndarray, t: int, branch: str) -> Var:
        _, _, _, _, gs = self.eval_geometry_jet(tape, x, t, branch)
        return gs

    # -- appearance ---------------------------------------------------------------

    def texture_var(self, tape: Tape) -> Var:
        return self.store.leaf(tape, "tex")

    def residual(self, tape: Tape, u, d, t: int, branch: str, pinned: bool = False) -> Var:
        """T_I log-multipliers, clamped to [-5, 5]. ``pinned`` substitutes the
        frame-0 appearance latent (time-independent texture mode)."""
        n = u.shape[0]
        enc_u = pe_encode(u, self.cfg.pe_uv)
        enc_d = pe_encode(d if isinstance(d, Var) else tape.constant(d), self.cfg.pe_dir)
        emb = embed_time(tape, self.store, f"time_app.{branch}", t, n=n, pinned=pinned)
        h = concat([enc_u, enc_d, emb], axis=-1)
        out = mlp_forward(tape, self.store, f"ti.{branch}", self.spec_ti, h)
        return out.clamp(-5.0, 5.0)

    def radiance(self, tape: Tape, u, d, t: int, branch: str, pinned: bool = False) -> Var:
        """Hybrid texture color: explicit lookup times exp(residual)."""
        from .appearance import texture_lookup
        base = texture_lookup(tape, self.texture_var(tape), u)
        return base * self.residual(tape, u, d, t, branch, pinned).exp()

    # -- persistence ---------------------------------------------------------------

    def save(self, path: str, train_cfg: "TrainConfig | None" = None) -> None:
        arrays = {}
        for name in self.store.blocks:
            arrays[f"fields/param/{name}"] = self.store.blocks[name]
            arrays[f"fields/adam_m/{name}"] = self.store.m[name]
            arrays[f"fields/adam_v/{name}"] = self.store.v[name]
        for name in self.rig.store.blocks:
            arrays[f"rig/param/{name}"] = self.rig.store.blocks[name]
            arrays[f"rig/adam_m/{name}"] = self.rig.store.m[name]
            arrays[f"rig/adam_v/{name}"] = self.rig.store.v[name]
        arrays["meta/steps"] = np.array([self.store.step, self.rig.store.step],
                                        dtype=np.int64)
        arrays["meta/landmarks"] = self.rig.landmarks
        cfg_json = config_to_json(self.cfg, train_cfg)
        arrays["meta/config"] = np.frombuffer(cfg_json.encode(), dtype=np.uint8).copy()
        checkpoint.save_arrays(path, arrays)

    @staticmethod
    def load(path: str) -> "SceneModel":
        arrays = checkpoint.load_arrays(path)
        cfg, _ = config_from_json(bytes(arrays["meta/config"]).decode())
        fields = ParamStore(cfg.np_dtype())
        rig_store = ParamStore(np.float64)
        for key, val in arrays.items():
            scope, _, rest = key.partition("/")
            kind, _, name = rest.partition("/")
            if scope == "fields" and kind == "param":
                fields.add(name, val)
            elif scope == "rig" and kind == "param":
                rig_store.add(name, val)
        for key, val in arrays.items():
            scope, _, rest = key.partition("/")
            kind, _, name = rest.partition("/")
            store = fields if scope == "fields" else rig_store if scope == "rig" else None
            if store is None:
                continue
            if kind == "adam_m":
                store.m[name] = val.astype(store.dtype)
            elif kind == "adam_v":
                store.v[name] = val.astype(store.dtype)
        fields.step, rig_store.step = (int(v) for v in arrays["meta/steps"])
        rig = Rig(rig_store, arrays["meta/landmarks"])
        return SceneModel(cfg, fields, rig)

    @staticmethod
    def load_train_config(path: str) -> TrainConfig:
        arrays = checkpoint.load_arrays(path)
        _, train = config_from_json(bytes(arrays["meta/config"]).decode())
        return train
