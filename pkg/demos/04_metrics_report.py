"""
Evaluation report and UV-quality visualizations
===============================================

Runs the metrics pass on a trained run: held-out PSNR/SSIM, the conformality
(angle) and round-trip (cycle) errors at surface points, texture stability
across frames (ASTD), plus two diagnostic images per view:

  * an angle-error map (bright = locally sheared parameterization),
  * a render with the texture swapped for a UV checkerboard, which makes
    swimming or stretched UVs obvious at a glance.

    python demos/04_metrics_report.py [run_dir]
"""
import os
import sys

from texvol.config import TrainConfig
from texvol.metrics import compute_report, format_report
from texvol.model import SceneModel
from texvol.synthetic import SyntheticSpec, generate_synthetic

run = sys.argv[1] if len(sys.argv) > 1 else "runs/demo_train"
ckpt = os.path.join(run, "model.tvck")
if not os.path.exists(ckpt):
    raise SystemExit(f"{ckpt} not found; run demos/02_train_and_render.py first")

model = SceneModel.load(ckpt)
tcfg = SceneModel.load_train_config(ckpt)

# demo 02 trains on this exact scene; regenerating it is deterministic
spec = SyntheticSpec(frames=2, image_size=32, n_train_views=4,
                     shell_width_frac=0.05, gt_samples=64)
ds, _ = generate_synthetic(spec, seed=0)

report = compute_report(model, ds, n_coarse=tcfg.n_coarse, n_fine=tcfg.n_fine,
                        seed=tcfg.seed, out_dir=os.path.join(run, "metrics"))
print(format_report(report), end="")
print(f"maps written under {run}/metrics/")
