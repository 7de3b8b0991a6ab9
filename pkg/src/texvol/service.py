"""Local editing service over a trained scene.

HTTP for control and metadata, a binary payload for mesh buffers, PNG for
textures and renders, WebSocket for preview pushes. Single scene per
process, single writer at a time; accepted edits are journaled as JSON
lines so a session can be replayed exactly.

Endpoints:
    GET  /scene                  summary (frames, controls, revision, ...)
    GET  /mesh?frame=t           preview mesh payload, deformed to frame t
    GET  /texture                current explicit texture as PNG (sRGB)
    POST /edit                   control-point edit -> revision + vertices
    POST /texture                write a texture region (linear or sRGB)
    POST /render                 queue an offline render -> job id
    GET  /render/{job}           job status
    GET  /render/{job}/image     finished render as PNG (RGBA)
    WS   /ws                     {type, revision, kind, frame, count,
                                  vertices_b64} after every accepted edit

POST /edit body: {"index": int, "frame": int (-1 = all frames),
"delta": [dx,dy,dz], "preview_frame": int?}. Response and WS pushes carry
the deformed vertex buffer for the preview frame as base64 little-endian
float32 triples.

POST /texture body: {"origin": [row, col], "rgb": [[[r,g,b],...],...],
"encoding": "srgb"|"linear"}. Values in [0,1]; the journal stores the
linear patch so replay is exact.

POST /render body: {"frame": int, "view": int}. The render uses the model
state at submission time.
"""
from __future__ import annotations

import asyncio
import base64
import io
import json
import logging
import os

import numpy as np
from fastapi import FastAPI, HTTPException, Query, WebSocket, WebSocketDisconnect
from fastapi.responses import Response
from pydantic import BaseModel

from .appearance import linear_to_srgb, srgb_to_linear, to_uint8, write_texture_region
from .deform import ALL_FRAMES, ControlPointEdit
from .mesh import deform_preview, extract_mesh, mesh_payload
from .model import SceneModel
from .render import render_image_model

log = logging.getLogger(__name__)


class EditRequest(BaseModel):
    index: int
    frame: int = ALL_FRAMES
    delta: list[float]
    preview_frame: "int | None" = None


class TextureWrite(BaseModel):
    origin: list[int]          # row, col
    rgb: list                  # rows x cols x 3 floats in [0,1]
    encoding: str = "srgb"


class RenderRequest(BaseModel):
    frame: int
    view: int


class SessionState:
    """Scene plus edit bookkeeping; one instance per service process."""

    def __init__(self, model: SceneModel, dataset=None,
                 journal_path: "str | None" = None, *,
                 mesh_resolution: int = 64, n_coarse: int = 32,
                 n_fine: int = 32, seed: int = 0):
        self.model = model
        self.dataset = dataset
        self.revision = 0
        self.mesh_resolution = mesh_resolution
        self.n_coarse = n_coarse
        self.n_fine = n_fine
        self.seed = seed
        self.journal_path = journal_path
        self.jobs: dict[str, dict] = {}
        self._job_counter = 0
        self._mesh_cache: dict[int, object] = {}

    # -- preview mesh ---------------------------------------------------------

    def mesh(self, frame: int):
        """Canonical extraction per frame, cached; edits only move the rig so
        the cache stays valid across them."""
        if frame not in self._mesh_cache:
            self._mesh_cache[frame] = extract_mesh(
                self.model, frame, resolution=self.mesh_resolution)
        return self._mesh_cache[frame]

    def preview_vertices(self, frame: int) -> np.ndarray:
        return deform_preview(self.mesh(frame), self.model.rig, frame)

    # -- edits ----------------------------------------------------------------

    def apply_record(self, record: dict) -> None:
        """Mutate the scene per one journal record (also the live edit path)."""
        kind = record.get("kind")
        if kind == "control":
            edit = ControlPointEdit(int(record["frame"]), int(record["index"]),
                                    np.asarray(record["delta"], dtype=np.float64))
            self.model.rig = self.model.rig.apply_edit(edit)
        elif kind == "texture":
            patch = np.asarray(record["rgb"], dtype=np.float64)
            if patch.ndim != 3 or patch.shape[-1] != 3:
                raise ValueError("texture patch must be rows x cols x 3")
            tex = self.model.store["tex"]
            origin = (int(record["origin"][0]), int(record["origin"][1]))
            self.model.store.set("tex", write_texture_region(tex, origin, patch))
        else:
            raise ValueError(f"unknown edit kind {kind!r}")
        self.revision += 1

    def journal(self, record: dict) -> None:
        if self.journal_path is None:
            return
        with open(self.journal_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    def replay(self) -> int:
        """Apply every record in the journal file; returns the count."""
        if self.journal_path is None or not os.path.exists(self.journal_path):
            return 0
        n = 0
        with open(self.journal_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                self.apply_record(json.loads(line))
                n += 1
        log.info("replayed %d edits from %s", n, self.journal_path)
        return n

    # -- render jobs ----------------------------------------------------------

    def snapshot(self) -> SceneModel:
        return SceneModel(self.model.cfg, self.model.store.copy(),
                          self.model.rig.copy())

    def new_job(self, frame: int, view: int) -> dict:
        self._job_counter += 1
        job = {"id": f"job{self._job_counter}", "status": "queued",
               "frame": frame, "view": view, "revision": self.revision,
               "error": None}
        self.jobs[job["id"]] = job
        return job


def _b64_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode()


def _png_bytes(img: np.ndarray, alpha: "np.ndarray | None" = None) -> bytes:
    from PIL import Image

    rgb = linear_to_srgb(np.asarray(img))
    if alpha is not None:
        rgba = np.concatenate([rgb, np.asarray(alpha)[..., None]], axis=-1)
        pil = Image.fromarray(to_uint8(rgba), mode="RGBA")
    else:
        pil = Image.fromarray(to_uint8(rgb), mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def create_app(state: SessionState) -> FastAPI:
    app = FastAPI(title="texvol edit service")
    app.state.session = state
    write_lock = asyncio.Lock()
    subscribers: set[asyncio.Queue] = set()

    def check_frame(frame: int, allow_all: bool = False) -> None:
        if allow_all and frame == ALL_FRAMES:
            return
        if not 0 <= frame < state.model.cfg.frames:
            raise HTTPException(400, f"frame {frame} outside 0..{state.model.cfg.frames - 1}")

    async def broadcast(msg: dict) -> None:
        for q in list(subscribers):
            q.put_nowait(msg)

    @app.get("/scene")
    def scene_summary():
        cfg = state.model.cfg
        rig = state.model.rig
        out = {
            "frames": cfg.frames,
            "n_controls": rig.n_points,
            "revision": state.revision,
            "tex_height": cfg.tex_h,
            "tex_width": cfg.tex_w,
            "bbox": [list(map(float, cfg.bbox_lo)), list(map(float, cfg.bbox_hi))],
            "mesh_resolution": state.mesh_resolution,
            "targets": rig.targets().tolist(),
            "spoints": rig.store["rig.spoints"].astype(float).tolist(),
        }
        if state.dataset is not None:
            out["views"] = state.dataset.views
            out["heldout_view"] = state.dataset.heldout_view
            out["image_size"] = list(state.dataset.images.shape[2:4])
        return out

    @app.get("/mesh")
    def get_mesh(frame: int = Query(0)):
        check_frame(frame)
        mesh = state.mesh(frame)
        verts = deform_preview(mesh, state.model.rig, frame)
        return Response(content=mesh_payload(mesh, verts),
                        media_type="application/octet-stream")

    @app.get("/texture")
    def get_texture():
        return Response(content=_png_bytes(state.model.store["tex"]),
                        media_type="image/png")

    @app.post("/edit")
    async def post_edit(req: EditRequest):
        check_frame(req.frame, allow_all=True)
        if len(req.delta) != 3:
            raise HTTPException(400, "delta must have three components")
        if not all(np.isfinite(req.delta)):
            raise HTTPException(400, "delta must be finite")
        if not 0 <= req.index < state.model.rig.n_points:
            raise HTTPException(400, f"control index {req.index} out of range")
        pf = req.preview_frame if req.preview_frame is not None else max(req.frame, 0)
        check_frame(pf)
        record = {"kind": "control", "index": req.index, "frame": req.frame,
                  "delta": [float(x) for x in req.delta]}
        async with write_lock:
            state.apply_record(record)
            state.journal(record)
            verts = state.preview_vertices(pf)
            msg = {"type": "edit", "kind": "control", "revision": state.revision,
                   "frame": pf, "count": int(verts.shape[0]),
                   "vertices_b64": _b64_f32(verts)}
        await broadcast(msg)
        return msg

    @app.post("/texture")
    async def post_texture(req: TextureWrite):
        if len(req.origin) != 2:
            raise HTTPException(400, "origin must be [row, col]")
        if req.encoding not in ("srgb", "linear"):
            raise HTTPException(400, f"unknown encoding {req.encoding!r}")
        try:
            patch = np.asarray(req.rgb, dtype=np.float64)
        except ValueError:
            raise HTTPException(400, "rgb must be a rows x cols x 3 array")
        if patch.ndim != 3 or patch.shape[-1] != 3:
            raise HTTPException(400, "rgb must be a rows x cols x 3 array")
        if not np.isfinite(patch).all():
            raise HTTPException(400, "rgb values must be finite")
        if req.encoding == "srgb":
            patch = srgb_to_linear(np.clip(patch, 0.0, 1.0))
        record = {"kind": "texture", "origin": [int(x) for x in req.origin],
                  "rgb": patch.tolist()}
        async with write_lock:
            state.apply_record(record)
            state.journal(record)
            verts = state.preview_vertices(0)
            msg = {"type": "edit", "kind": "texture", "revision": state.revision,
                   "frame": 0, "count": int(verts.shape[0]),
                   "vertices_b64": _b64_f32(verts)}
        await broadcast(msg)
        return {"revision": state.revision}

    @app.post("/render")
    async def post_render(req: RenderRequest):
        if state.dataset is None:
            raise HTTPException(400, "service has no dataset; offline render unavailable")
        check_frame(req.frame)
        if not 0 <= req.view < state.dataset.views:
            raise HTTPException(400, f"view {req.view} outside 0..{state.dataset.views - 1}")
        async with write_lock:
            snap = state.snapshot()
            job = state.new_job(req.frame, req.view)
        cam = state.dataset.cameras[req.view]
        loop = asyncio.get_running_loop()

        def work():
            return render_image_model(snap, cam, req.frame,
                                      n_coarse=state.n_coarse,
                                      n_fine=state.n_fine, seed=state.seed,
                                      view=req.view)

        async def run():
            job["status"] = "running"
            try:
                c, a = await loop.run_in_executor(None, work)
                job["image"], job["alpha"] = c, a
                job["status"] = "done"
            except Exception as exc:  # surfaced through the status endpoint
                job["status"] = "error"
                job["error"] = str(exc)
                log.exception("render job %s failed", job["id"])

        asyncio.create_task(run())
        return {"job_id": job["id"], "revision": job["revision"]}

    @app.get("/render/{job_id}")
    def render_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown render job {job_id!r}")
        return {k: job[k] for k in ("id", "status", "frame", "view", "revision", "error")}

    @app.get("/render/{job_id}/image")
    def render_image(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown render job {job_id!r}")
        if job["status"] != "done":
            raise HTTPException(409, f"render job {job_id!r} is {job['status']}")
        return Response(content=_png_bytes(job["image"], job["alpha"]),
                        media_type="image/png")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        queue: asyncio.Queue = asyncio.Queue()
        subscribers.add(queue)
        try:
            await ws.send_json({"type": "hello", "revision": state.revision})
            while True:
                await ws.send_json(await queue.get())
        except WebSocketDisconnect:
            pass
        finally:
            subscribers.discard(queue)

    return app


def load_session(scene_dir: str, checkpoint: str, *, journal: "str | None" = None,
                 mesh_resolution: int = 64, n_coarse: int = 32, n_fine: int = 32,
                 seed: int = 0, replay: bool = False) -> SessionState:
    from .scene import load_scene

    model = SceneModel.load(checkpoint)
    dataset = load_scene(scene_dir)
    if journal is None:
        journal = os.path.join(scene_dir, "edits.jsonl")
    state = SessionState(model, dataset, journal, mesh_resolution=mesh_resolution,
                         n_coarse=n_coarse, n_fine=n_fine, seed=seed)
    if replay:
        state.replay()
    return state


def serve(state: SessionState, host: str = "127.0.0.1", port: int = 8712) -> None:
    import uvicorn

    uvicorn.run(create_app(state), host=host, port=port, log_level="info")
