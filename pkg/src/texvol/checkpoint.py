"""Deterministic single-file checkpoint archive.

Layout: magic ``TVCK`` | u32 version | u64 index length | index JSON (utf-8,
sorted keys) | concatenated little-endian array payload. Arrays are written
in sorted-name order at 16-byte alignment; identical stores produce
byte-identical files (no timestamps, no compression), which the training
determinism check relies on.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .autodiff import ParamStore

MAGIC = b"TVCK"
VERSION = 1
_ALIGN = 16


def _entries(arrays: dict) -> tuple[bytes, list]:
    index = {"version": VERSION, "arrays": []}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        pad = (-offset) % _ALIGN
        offset += pad
        chunks.append((pad, arr))
        index["arrays"].append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str.lstrip("=|"),
            "offset": offset,
        })
        offset += arr.nbytes
    blob = json.dumps(index, sort_keys=True, separators=(",", ":")).encode()
    return blob, chunks


def save_arrays(path: str, arrays: dict) -> None:
    blob, chunks = _entries(arrays)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for pad, arr in chunks:
            f.write(b"\0" * pad)
            f.write(arr.tobytes())


def load_arrays(path: str) -> dict:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint archive")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported archive version {version}")
        (n,) = struct.unpack("<Q", f.read(8))
        index = json.loads(f.read(n))
        base = f.tell()
        out = {}
        for ent in index["arrays"]:
            f.seek(base + ent["offset"])
            dt = np.dtype(ent["dtype"]).newbyteorder("<")
            count = int(np.prod(ent["shape"])) if ent["shape"] else 1
            arr = np.frombuffer(f.read(count * dt.itemsize), dtype=dt)
            out[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return out


def save_store(path: str, store: ParamStore, extra: "dict | None" = None) -> None:
    """Parameters plus optimizer state; ``extra`` arrays ride along."""
    arrays = {}
    for name in store.blocks:
        arrays[f"param/{name}"] = store.blocks[name]
        arrays[f"adam_m/{name}"] = store.m[name]
        arrays[f"adam_v/{name}"] = store.v[name]
    arrays["meta/step"] = np.array([store.step], dtype=np.int64)
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    save_arrays(path, arrays)


def load_store(path: str, dtype=None) -> tuple[ParamStore, dict]:
    """Rebuild the store; dtype defaults to whatever the file carries."""
    arrays = load_arrays(path)
    if dtype is None:
        dtype = next((v.dtype for k, v in arrays.items()
                      if k.startswith("param/")), np.float64)
    store = ParamStore(dtype)
    extra = {}
    for key, val in arrays.items():
        kind, _, name = key.partition("/")
        if kind == "param":
            store.add(name, val)
        elif kind == "extra":
            extra[name] = val
    for key, val in arrays.items():
        kind, _, name = key.partition("/")
        if kind == "adam_m":
            store.m[name] = val.astype(store.dtype)
        elif kind == "adam_v":
            store.v[name] = val.astype(store.dtype)
        elif key == "meta/step":
            store.step = int(val[0])
    return store, extra
