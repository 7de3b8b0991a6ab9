"""Dataset model and on-disk scene layout.

Layout (version 1):

    scene.toml                      resolution, counts, bbox, control indices
    cameras.txt                     one line per view: fx fy cx cy w h, rows of R, center
    canonical.obj                   canonical tracked mesh with UVs
    frame_{t}/mesh.obj              tracked mesh at frame t (same topology/UVs)
    frame_{t}/view_{v}.png          RGB image (sRGB)
    frame_{t}/view_{v}_mask.png     8-bit alpha
    gt/                             optional ground-truth bundle (rig.txt,
                                    texture.png + texture.f32, spec.toml)

Images are stored sRGB-encoded; loading converts to linear. Masks are
luminance PNGs holding alpha directly (no transfer curve).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .appearance import from_uint8, linear_to_srgb, srgb_to_linear, to_uint8
from .render import Camera


# -- images -------------------------------------------------------------------

def save_png(path: str, img: np.ndarray, srgb: bool = True) -> None:
    """(H,W,3|4) floats in [0,1] -> 8-bit PNG; color channels get the sRGB
    curve, an alpha channel is stored linearly."""
    img = np.asarray(img)
    if img.ndim == 2:
        Image.fromarray(to_uint8(img), mode="L").save(path)
        return
    rgb = linear_to_srgb(img[..., :3]) if srgb else img[..., :3]
    if img.shape[-1] == 4:
        out = np.concatenate([rgb, img[..., 3:4]], axis=-1)
        Image.fromarray(to_uint8(out), mode="RGBA").save(path)
    else:
        Image.fromarray(to_uint8(rgb), mode="RGB").save(path)


def load_png(path: str, srgb: bool = True) -> np.ndarray:
    arr = from_uint8(np.asarray(Image.open(path)))
    if arr.ndim == 2:
        return arr
    if srgb:
        rgb = srgb_to_linear(arr[..., :3])
        return np.concatenate([rgb, arr[..., 3:]], axis=-1) if arr.shape[-1] == 4 else rgb
    return arr


def save_raw_f32(path: str, img: np.ndarray) -> None:
    """Lossless planar float32 dump: ascii header line, then planes."""
    img = np.ascontiguousarray(img, dtype="<f4")
    with open(path, "wb") as f:
        f.write(f"f32 {' '.join(str(s) for s in img.shape)}\n".encode())
        f.write(np.moveaxis(img, -1, 0).tobytes() if img.ndim == 3 else img.tobytes())


def load_raw_f32(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.readline().decode().split()
        if head[0] != "f32":
            raise ValueError(f"{path}: not a raw float32 dump")
        shape = tuple(int(s) for s in head[1:])
        arr = np.frombuffer(f.read(), dtype="<f4")
    if len(shape) == 3:
        return np.moveaxis(arr.reshape(shape[2], shape[0], shape[1]), 0, -1).astype(np.float64)
    return arr.reshape(shape).astype(np.float64)


# -- meshes ---------------------------------------------------------------------

def save_obj(path: str, vertices: np.ndarray, uvs: "np.ndarray | None" = None,
             faces: "np.ndarray | None" = None) -> None:
    """OBJ with matching v/vt indexing (vertex i carries uv i)."""
    with open(path, "w") as f:
        f.write("# texvol mesh\n")
        for v in vertices:
            f.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        if uvs is not None:
            for t in uvs:
                f.write(f"vt {t[0]:.17g} {t[1]:.17g}\n")
        if faces is not None:
            for tri in faces:
                if uvs is not None:
                    f.write("f " + " ".join(f"{i + 1}/{i + 1}" for i in tri) + "\n")
                else:
                    f.write("f " + " ".join(str(i + 1) for i in tri) + "\n")


def load_obj(path: str):
    """Returns (vertices, uvs or None, faces or None); polygons are fanned."""
    vs, ts, fs = [], [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vs.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                ts.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    fs.append([idx[0], idx[k], idx[k + 1]])
    verts = np.array(vs, dtype=np.float64)
    uvs = np.array(ts, dtype=np.float64) if ts else None
    faces = np.array(fs, dtype=np.int64) if fs else None
    return verts, uvs, faces


# -- cameras ----------------------------------------------------------------------

def save_cameras(path: str, cams: list) -> None:
    with open(path, "w") as f:
        f.write("texvol-cameras 1\n")
        for c in cams:
            nums = [c.fx, c.fy, c.cx, c.cy, float(c.width), float(c.height)]
            nums += list(c.rot.ravel()) + list(c.center)
            f.write(" ".join(f"{x:.17g}" for x in nums) + "\n")


def load_cameras(path: str) -> list:
    cams = []
    with open(path) as f:
        head = f.readline().split()
        if head[:1] != ["texvol-cameras"]:
            raise ValueError(f"{path}: not a camera file")
        for line in f:
            if not line.strip():
                continue
            v = [float(x) for x in line.split()]
            cams.append(Camera(v[0], v[1], v[2], v[3], int(v[4]), int(v[5]),
                               np.array(v[6:15]).reshape(3, 3), np.array(v[15:18])))
    return cams


# -- rig text format -----------------------------------------------------------------

def save_rig_text(path: str, rig) -> None:
    """Human-diffable rig dump; full precision so reload is lossless."""
    g = lambda x: f"{x:.17g}"
    with open(path, "w") as f:
        f.write("texvol-rig 1\n")
        f.write(f"frames {rig.frames} points {rig.n_points}\n")
        f.write("targets\n")
        for z in rig.targets():
            f.write("  " + " ".join(map(g, z)) + "\n")
        for t in range(rig.frames):
            f.write(f"frame {t}\n")
            f.write("  quat " + " ".join(map(g, rig.quat(t))) + "\n")
            f.write("  trans " + " ".join(map(g, rig.trans(t))) + "\n")
            for s in rig.spoints(t):
                f.write("  s " + " ".join(map(g, s)) + "\n")
            f.write("  radii " + " ".join(map(g, rig.radii(t))) + "\n")
            lm = rig.landmarks[t]
            if not np.any(np.isnan(lm)):
                for l in lm:
                    f.write("  landmark " + " ".join(map(g, l)) + "\n")


def load_rig_text(path: str):
    from .deform import Rig

    with open(path) as f:
        lines = [l.strip() for l in f if l.strip()]
    if lines[0].split() != ["texvol-rig", "1"]:
        raise ValueError(f"{path}: not a rig file")
    head = lines[1].split()
    frames, k = int(head[1]), int(head[3])
    i = 3
    targets = np.array([[float(x) for x in lines[i + j].split()] for j in range(k)])
    i += k
    quat = np.zeros((frames, 4))
    trans = np.zeros((frames, 3))
    sp = np.zeros((frames, k, 3))
    radii = np.zeros((frames, k))
    landmarks = np.full((frames, k, 3), np.nan)
    t = -1
    si = li = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "frame":
            t = int(parts[1])
            si = li = 0
        elif parts[0] == "quat":
            quat[t] = [float(x) for x in parts[1:]]
        elif parts[0] == "trans":
            trans[t] = [float(x) for x in parts[1:]]
        elif parts[0] == "s":
            sp[t, si] = [float(x) for x in parts[1:]]
            si += 1
        elif parts[0] == "radii":
            radii[t] = [float(x) for x in parts[1:]]
        elif parts[0] == "landmark":
            landmarks[t, li] = [float(x) for x in parts[1:]]
            li += 1
        i += 1
    rig = Rig.identity(frames, sp, targets, radii, landmarks)
    rig.store.set("rig.quat", quat)
    rig.store.set("rig.trans", trans)
    return rig


# -- dataset ---------------------------------------------------------------------------

@dataclass
class SceneDataset:
    cameras: list                 # V cameras
    images: np.ndarray            # (F,V,H,W,3) linear RGB
    masks: np.ndarray             # (F,V,H,W) alpha
    mesh_vertices: np.ndarray     # (F,P,3) tracked vertices
    mesh_uvs: np.ndarray          # (P,2) shared UVs
    mesh_faces: np.ndarray        # (T,3)
    canonical_vertices: np.ndarray  # (P,3)
    control_idx: np.ndarray       # (K,)
    bbox: np.ndarray              # (2,3)
    heldout_view: int = -1        # index into cameras, excluded from training
    region_uv: tuple = (0.0, 0.0, 1.0, 1.0)  # metric region in UV space
    gt_dir: "str | None" = None

    @property
    def frames(self) -> int:
        return self.images.shape[0]

    @property
    def views(self) -> int:
        return self.images.shape[1]

    @property
    def train_views(self) -> list:
        return [v for v in range(self.views) if v != self.heldout_view]


def compute_bbox(points: np.ndarray, padding: float = 0.0) -> np.ndarray:
    """Axis-aligned min/max over (...,3) points, expanded per-axis by a
    fraction of the extent."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.size == 0:
        raise ValueError("cannot compute a bounding box of nothing")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pad = (hi - lo) * padding
    return np.array([lo - pad, hi + pad])


def save_scene(path: str, ds: SceneDataset) -> None:
    os.makedirs(path, exist_ok=True)
    save_cameras(os.path.join(path, "cameras.txt"), ds.cameras)
    save_obj(os.path.join(path, "canonical.obj"), ds.canonical_vertices,
             ds.mesh_uvs, ds.mesh_faces)
    for t in range(ds.frames):
        fd = os.path.join(path, f"frame_{t}")
        os.makedirs(fd, exist_ok=True)
        save_obj(os.path.join(fd, "mesh.obj"), ds.mesh_vertices[t],
                 ds.mesh_uvs, ds.mesh_faces)
        for v in range(ds.views):
            save_png(os.path.join(fd, f"view_{v}.png"), ds.images[t, v])
            save_png(os.path.join(fd, f"view_{v}_mask.png"), ds.masks[t, v])
    with open(os.path.join(path, "scene.toml"), "w") as f:
        f.write("version = 1\n")
        f.write(f"frames = {ds.frames}\nviews = {ds.views}\n")
        f.write(f"heldout_view = {ds.heldout_view}\n")
        f.write("control_idx = [" + ", ".join(map(str, ds.control_idx)) + "]\n")
        f.write("bbox_lo = [" + ", ".join(f"{x:.17g}" for x in ds.bbox[0]) + "]\n")
        f.write("bbox_hi = [" + ", ".join(f"{x:.17g}" for x in ds.bbox[1]) + "]\n")
        f.write("region_uv = [" + ", ".join(f"{x:.17g}" for x in ds.region_uv) + "]\n")


def load_scene(path: str) -> SceneDataset:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    cfg_path = os.path.join(path, "scene.toml")
    if not os.path.exists(cfg_path):
        raise FileNotFoundError(f"{path}: missing scene.toml")
    with open(cfg_path, "rb") as f:
        cfg = tomllib.load(f)
    frames, views = cfg["frames"], cfg["views"]
    cams = load_cameras(os.path.join(path, "cameras.txt"))
    if len(cams) != views:
        raise ValueError(f"{path}: cameras.txt has {len(cams)} views, scene.toml says {views}")
    canon, uvs, faces = load_obj(os.path.join(path, "canonical.obj"))
    mesh_v = []
    images = masks = None
    for t in range(frames):
        fd = os.path.join(path, f"frame_{t}")
        verts, _, _ = load_obj(os.path.join(fd, "mesh.obj"))
        if verts.shape != canon.shape:
            raise ValueError(f"frame {t}: vertex count differs from canonical mesh")
        mesh_v.append(verts)
        for v in range(views):
            ip = os.path.join(fd, f"view_{v}.png")
            mp = os.path.join(fd, f"view_{v}_mask.png")
            for p in (ip, mp):
                if not os.path.exists(p):
                    raise FileNotFoundError(f"missing {p} (frame {t}, view {v})")
            img = load_png(ip)
            msk = load_png(mp)
            if images is None:
                h, w = img.shape[:2]
                images = np.zeros((frames, views, h, w, 3))
                masks = np.zeros((frames, views, h, w))
            if img.shape[:2] != (h, w) or msk.shape[:2] != (h, w):
                raise ValueError(f"inconsistent resolution at frame {t} view {v}")
            images[t, v] = img[..., :3]
            masks[t, v] = msk if msk.ndim == 2 else msk[..., 0]
    gt = os.path.join(path, "gt")
    return SceneDataset(
        cameras=cams, images=images, masks=masks,
        mesh_vertices=np.stack(mesh_v), mesh_uvs=uvs, mesh_faces=faces,
        canonical_vertices=canon, control_idx=np.array(cfg["control_idx"], dtype=np.int64),
        bbox=np.array([cfg["bbox_lo"], cfg["bbox_hi"]]),
        heldout_view=cfg.get("heldout_view", -1),
        region_uv=tuple(cfg.get("region_uv", (0.0, 0.0, 1.0, 1.0))),
        gt_dir=gt if os.path.isdir(gt) else None)
