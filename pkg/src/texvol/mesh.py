"""Coarse textured preview mesh: extraction, deformation, binary payload.

The mesh is extracted in canonical space (regular grid over the expanded
box) so a single extraction serves every frame; per-frame positions come
from the rig's preview deformation. Isosurface threshold defaults to
1/cell so one cell of that density is near-opaque.

Binary payload (little-endian; used by the edit service):

    magic  b"TVMB"
    u32    version (1)
    u32    vertex count NV
    u32    triangle count NT
    u32    flags (bit0 uvs, bit1 normals)
    f32    NV*3 vertices
    f32    NV*2 uvs          (if flag)
    f32    NV*3 normals      (if flag)
    u32    NT*3 triangle indices
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape

PAYLOAD_MAGIC = b"TVMB"
PAYLOAD_VERSION = 1


@dataclass
class PreviewMesh:
    vertices: np.ndarray   # (NV,3) canonical space
    faces: np.ndarray      # (NT,3) int
    uvs: np.ndarray        # (NV,2)
    normals: np.ndarray    # (NV,3)
    frame: int
    n_controls: int        # rig size the mesh was extracted against


def _density_grid(model, t: int, resolution: int, branch: str,
                  chunk: int = 65536):
    lo, hi = model.cfg.canonical_box()
    axes = [np.linspace(lo[a], hi[a], resolution) for a in range(3)]
    spacing = (hi - lo) / (resolution - 1)
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=-1)
    sigma = np.empty(pts.shape[0])
    for k in range(0, pts.shape[0], chunk):
        tape = Tape()
        _, s = model.eval_canonical(tape, tape.constant(pts[k:k + chunk]), t, branch)
        sigma[k:k + chunk] = np.asarray(s.value, dtype=np.float64)
    return sigma.reshape(resolution, resolution, resolution), lo, spacing


def extract_mesh(model, t: int = 0, resolution: int = 128,
                 iso: "float | None" = None, branch: str = "fine") -> PreviewMesh:
    """Marching-cubes isosurface of the canonical density at frame t.

    Vertex UVs are produced by the same canonical field evaluation the
    renderer uses, so they agree with it bitwise. Raises ValueError naming
    the maximum observed density when the threshold clears it.
    """
    from skimage.measure import marching_cubes

    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    vol, lo, spacing = _density_grid(model, t, resolution, branch)
    if iso is None:
        iso = 1.0 / float(np.mean(spacing))
    if iso >= vol.max() or iso <= vol.min():
        raise ValueError(
            f"no isosurface at density {iso:.6g}: grid densities span "
            f"[{vol.min():.6g}, {vol.max():.6g}]")
    verts, faces, normals, _ = marching_cubes(vol, level=float(iso),
                                              spacing=tuple(spacing))
    verts = verts + lo
    # Drop degenerate triangles (repeated indices or zero area).
    v = verts[faces]
    area2 = np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=-1)
    distinct = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
                & (faces[:, 0] != faces[:, 2]))
    faces = faces[distinct & (area2 > 0.0)]

    tape = Tape()
    u, _ = model.eval_canonical(tape, tape.constant(verts), t, branch)
    uvs = np.asarray(u.value, dtype=np.float64)

    nrm = np.linalg.norm(normals, axis=-1, keepdims=True)
    normals = normals / np.where(nrm > 0, nrm, 1.0)
    return PreviewMesh(vertices=verts, faces=np.asarray(faces, dtype=np.int64),
                       uvs=uvs, normals=np.asarray(normals, dtype=np.float64),
                       frame=t, n_controls=model.rig.n_points)


def deform_preview(mesh: PreviewMesh, rig, t: int) -> np.ndarray:
    """Mesh vertices moved to frame t's observation space by the rig."""
    if rig.n_points != mesh.n_controls:
        raise ValueError(
            f"rig has {rig.n_points} control points but the mesh was "
            f"extracted against {mesh.n_controls}")
    return rig.deform_preview_np(mesh.vertices, t)


def save_mesh_obj(path: str, mesh: PreviewMesh,
                  vertices: "np.ndarray | None" = None) -> None:
    from .scene import save_obj

    save_obj(path, mesh.vertices if vertices is None else vertices,
             mesh.uvs, mesh.faces)


def mesh_payload(mesh: PreviewMesh,
                 vertices: "np.ndarray | None" = None) -> bytes:
    """Serialize for the wire; ``vertices`` overrides positions (deformed
    previews share the canonical topology/uvs)."""
    verts = mesh.vertices if vertices is None else np.asarray(vertices)
    if verts.shape != mesh.vertices.shape:
        raise ValueError("vertex override shape mismatch")
    nv = verts.shape[0]
    nt = mesh.faces.shape[0]
    head = PAYLOAD_MAGIC + struct.pack("<IIII", PAYLOAD_VERSION, nv, nt, 0b11)
    body = (verts.astype("<f4").tobytes()
            + mesh.uvs.astype("<f4").tobytes()
            + mesh.normals.astype("<f4").tobytes()
            + mesh.faces.astype("<u4").tobytes())
    return head + body


def read_mesh_payload(data: bytes) -> dict:
    if data[:4] != PAYLOAD_MAGIC:
        raise ValueError("not a mesh payload")
    version, nv, nt, flags = struct.unpack("<IIII", data[4:20])
    if version != PAYLOAD_VERSION:
        raise ValueError(f"unsupported mesh payload version {version}")
    off = 20
    out: dict = {"version": version}

    def take(count, dtype, shape):
        nonlocal off
        n = count * np.dtype(dtype).itemsize
        arr = np.frombuffer(data[off:off + n], dtype=dtype).reshape(shape)
        off += n
        return arr

    out["vertices"] = take(nv * 3, "<f4", (nv, 3)).astype(np.float64)
    if flags & 1:
        out["uvs"] = take(nv * 2, "<f4", (nv, 2)).astype(np.float64)
    if flags & 2:
        out["normals"] = take(nv * 3, "<f4", (nv, 3)).astype(np.float64)
    out["faces"] = take(nt * 3, "<u4", (nt, 3)).astype(np.int64)
    return out
