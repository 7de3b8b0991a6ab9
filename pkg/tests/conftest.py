import numpy as np
import pytest

from texvol.config import ModelConfig, TrainConfig
from texvol.synthetic import SyntheticSpec, generate_synthetic
from texvol.train import build_model

TINY = SyntheticSpec(frames=2, image_size=24, n_train_views=3, mesh_res=(12, 8),
                     gt_samples=32, tex_res=32, shell_width_frac=0.05)


@pytest.fixture(scope="session")
def tiny_scene():
    """Small synthetic bundle shared by read-only tests."""
    return generate_synthetic(TINY, seed=0)


@pytest.fixture(scope="session")
def tiny_model_cfg():
    return ModelConfig(mlp_depth=2, mlp_width=16, mlp_skip=None, pe_pos=2,
                       pe_dir=1, pe_uv=2, time_dim=4, tex_h=8, tex_w=8,
                       density_scale=25.0, sigma_bias=-4.0)


@pytest.fixture(scope="session")
def tiny_model(tiny_scene, tiny_model_cfg):
    """Untrained float64 model sized to the tiny scene (read-only)."""
    ds, _ = tiny_scene
    return build_model(ds, tiny_model_cfg, seed=0)


@pytest.fixture()
def fresh_model(tiny_scene, tiny_model_cfg):
    """Per-test model instance for tests that optimize or edit."""
    ds, _ = tiny_scene
    return build_model(ds, tiny_model_cfg, seed=0)


@pytest.fixture()
def small_train_cfg():
    return TrainConfig(iterations=8, stage_switch=4, batch_rays=32, n_coarse=8,
                       n_fine=8, seed=0, uv_decay_iters=8, probe_every=1000,
                       log_every=4, checkpoint_every=1000)


@pytest.fixture(scope="session")
def trained_tiny(tiny_scene, tiny_model_cfg):
    """Briefly optimized tiny model: density crosses the preview iso level.

    Treat as read-only; tests that edit state must copy (the service tests
    snapshot via ``SceneModel.load``/store copies).
    """
    from texvol.train import train_existing

    ds, _ = tiny_scene
    model = build_model(ds, tiny_model_cfg, seed=0)
    tcfg = TrainConfig(iterations=300, stage_switch=150, batch_rays=64,
                       n_coarse=8, n_fine=8, seed=0, uv_decay_iters=300,
                       log_every=0, probe_every=0, checkpoint_every=0,
                       uv_vertex_subset=64)
    train_existing(model, ds, tcfg, verbose=False)
    return model
