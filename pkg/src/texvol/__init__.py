"""Editable dynamic textured volumes.

A keypoint-driven deformation rig maps observation-space points into a
canonical frame, an implicit field assigns each canonical point a UV
coordinate and a density, and color comes from an explicit texture grid
modulated by an implicit view/time residual. Differentiable volume
rendering ties it together for training; mesh extraction, metrics and a
local edit service sit on top.
"""
from .autodiff import ParamStore, Tape, Var, concat, stack
from .config import ModelConfig, TrainConfig, load_config
from .deform import ALL_FRAMES, ControlPointEdit, Rig, init_rig
from .mesh import PreviewMesh, deform_preview, extract_mesh, mesh_payload, read_mesh_payload
from .metrics import angle_error_map, astd, bake_texture, compute_report, psnr, ssim, uv_checker_overlay
from .model import BRANCHES, SceneModel
from .render import Camera, render_image_model, render_rays
from .scene import SceneDataset, load_scene, save_scene
from .synthetic import SyntheticSpec, generate_synthetic
from .train import build_model, train_existing, train_model

__version__ = "0.1.0"

__all__ = [
    "ALL_FRAMES", "BRANCHES", "Camera", "ControlPointEdit", "ModelConfig",
    "ParamStore", "PreviewMesh", "Rig", "SceneDataset", "SceneModel",
    "SyntheticSpec", "Tape", "TrainConfig", "Var", "angle_error_map", "astd",
    "bake_texture", "build_model", "compute_report", "concat",
    "deform_preview", "extract_mesh", "generate_synthetic", "init_rig",
    "load_config", "load_scene", "mesh_payload", "psnr", "read_mesh_payload",
    "render_image_model", "render_rays", "save_scene", "ssim", "stack",
    "train_existing", "train_model", "uv_checker_overlay",
]
