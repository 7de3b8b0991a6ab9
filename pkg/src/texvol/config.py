"""Configuration dataclasses and TOML loading."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


@dataclass
class ModelConfig:
    frames: int = 1
    mlp_depth: int = 4
    mlp_width: int = 64
    mlp_skip: "int | None" = 2
    pe_pos: int = 6
    pe_dir: int = 4
    pe_uv: int = 6
    time_dim: int = 32
    tex_h: int = 64
    tex_w: int = 64
    # density = softplus(raw + sigma_bias) * density_scale; scale > 1 lets the
    # net reach shell-like densities without huge last-layer weights.
    density_scale: float = 1.0
    sigma_bias: float = 0.0
    bbox_lo: tuple = (-1.0, -1.0, -1.0)
    bbox_hi: tuple = (1.0, 1.0, 1.0)
    bbox_expand: float = 0.10
    dtype: str = "float64"

    def box(self) -> np.ndarray:
        return np.array([self.bbox_lo, self.bbox_hi], dtype=np.float64)

    def canonical_box(self) -> np.ndarray:
        b = self.box()
        mid = b.mean(axis=0)
        half = (b[1] - b[0]) / 2 * (1.0 + self.bbox_expand)
        return np.array([mid - half, mid + half])

    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class TrainConfig:
    iterations: int = 12000
    stage_switch: int = 8000
    batch_rays: int = 128
    n_coarse: int = 32
    n_fine: int = 32
    lr_start: float = 5e-4
    lr_end: float = 5e-5
    seed: int = 0
    # lambda_uv = exp(-k/tau); tau chosen so the weight hits uv_floor at
    # uv_decay_iters (1e-3 at 20000 by default).
    uv_decay_iters: int = 20000
    uv_floor: float = 1e-3
    # UV-head pre-fit to the tracked-mesh atlas before the main loop.
    uv_warmup_iters: int = 600
    uv_warmup_lr: float = 1e-3
    lambda_cycle: float = 1.0
    lambda_angle: float = 0.05
    lambda_sparsity: float = 0.05
    lambda_semantic: float = 0.05
    alpha_floor: float = 0.5       # cycle/angle apply to rays above this mask
    uv_vertex_subset: int = 1024
    log_every: int = 250
    checkpoint_every: int = 2000
    probe_every: int = 1000

    def uv_tau(self) -> float:
        return self.uv_decay_iters / np.log(1.0 / self.uv_floor)


def _apply(obj, table: dict, name: str):
    for key, val in table.items():
        if not hasattr(obj, key):
            raise KeyError(f"unknown key {key!r} in [{name}]")
        cur = getattr(obj, key)
        if isinstance(cur, tuple):
            val = tuple(val)
        setattr(obj, key, val)
    return obj


def load_config(path: str) -> tuple[ModelConfig, TrainConfig]:
    with open(path, "rb") as f:
        data = tomllib.load(f)
    model = _apply(ModelConfig(), data.get("model", {}), "model")
    train = _apply(TrainConfig(), data.get("train", {}), "train")
    return model, train


def config_to_json(model: ModelConfig, train: "TrainConfig | None" = None) -> str:
    doc = {"model": asdict(model)}
    if train is not None:
        doc["train"] = asdict(train)
    return json.dumps(doc, sort_keys=True)


def config_from_json(text: str) -> tuple[ModelConfig, TrainConfig]:
    doc = json.loads(text)
    model = _apply(ModelConfig(), doc.get("model", {}), "model")
    train = _apply(TrainConfig(), doc.get("train", {}), "train")
    return model, train
