"""
Editing a trained scene without retraining
==========================================

Loads (or quickly trains) a model, then performs the two edit kinds the
engine supports directly on the scene state:

  * dragging a deformation control point, which re-poses every frame's
    preview mesh through the rig without touching the field weights;
  * painting a rectangle into the explicit texture, which shows up in any
    subsequent render because the implicit branch only multiplies it.

Both edits go through the same journal records the HTTP service appends,
so the script doubles as a reference for the on-disk edit format.

    python demos/03_edit_session.py [run_dir]
"""
import json
import os
import sys

import numpy as np

from texvol.mesh import deform_preview, extract_mesh, save_mesh_obj
from texvol.model import SceneModel
from texvol.service import SessionState

run = sys.argv[1] if len(sys.argv) > 1 else "runs/demo_train"
ckpt = os.path.join(run, "model.tvck")
if not os.path.exists(ckpt):
    raise SystemExit(f"{ckpt} not found; run demos/02_train_and_render.py first")

model = SceneModel.load(ckpt)
state = SessionState(model, None, os.path.join(run, "edits.jsonl"),
                     mesh_resolution=33)

mesh = state.mesh(0)
print(f"preview mesh: {mesh.vertices.shape[0]} vertices, "
      f"{mesh.faces.shape[0]} triangles")
save_mesh_obj(os.path.join(run, "preview_before.obj"), mesh,
              state.preview_vertices(0))

# drag control point 0 along +x in every frame; the journal line is exactly
# what POST /edit would append
edit = {"kind": "control", "index": 0, "frame": -1, "delta": [0.2, 0.0, 0.0]}
state.apply_record(edit)
state.journal(edit)

moved = state.preview_vertices(0)
shift = np.linalg.norm(moved - deform_preview(mesh, model.rig, 0), axis=-1)
print(f"edit moved {np.count_nonzero(shift > 1e-6)} vertices, "
      f"max displacement {shift.max():.4f}")
save_mesh_obj(os.path.join(run, "preview_after.obj"), mesh, moved)

# paint a dark square into the top-left corner of the explicit texture
h, w = model.cfg.tex_h, model.cfg.tex_w
patch = np.full((h // 4, w // 4, 3), 0.05)
tex_edit = {"kind": "texture", "origin": [0, 0], "rgb": patch.tolist()}
state.apply_record(tex_edit)
state.journal(tex_edit)
print(f"texture painted: revision {state.revision}, journal at "
      f"{state.journal_path}")

with open(state.journal_path) as fh:
    for line in fh:
        rec = json.loads(line)
        print("journal:", rec["kind"],
              {k: v for k, v in rec.items() if k not in ("kind", "rgb")})
