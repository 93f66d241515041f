"""Versioned checkpoint archive: a JSON manifest followed by raw tensor bytes.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"CDGANCKP"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    manifest length M in bytes
    offset 20  M bytes   UTF-8 JSON manifest
    offset 20+M          tensor blob

The manifest has two keys. ``meta`` is free-form JSON (layer specs, seed,
epoch, ...). ``tensors`` is a list of ``{name, dtype, shape, offset, nbytes}``
entries; ``offset`` is relative to the start of the blob and ``dtype`` is a
little-endian numpy type string such as ``"<f4"``. Each tensor is stored
C-contiguous.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"CDGANCKP"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def _as_numpy(t) -> np.ndarray:
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    arr = np.asarray(t)
    if not arr.flags.c_contiguous:
        arr = arr.copy(order="C")
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def save_archive(path, tensors: dict, meta: dict) -> Path:
    """Write ``tensors`` (name -> array/tensor) and ``meta`` atomically to ``path``."""
    path = Path(path)
    entries, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = _as_numpy(t)
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(manifest)))
        f.write(manifest)
        for raw in chunks:
            f.write(raw)
    os.replace(tmp, path)
    return path


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, meta)``; tensors come back as numpy arrays."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint archive")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    start = _HEADER.size
    manifest = json.loads(data[start:start + mlen].decode("utf-8"))
    blob = memoryview(data)[start + mlen:]
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise CheckpointError(f"{path}: tensor {e['name']!r} runs past end of file")
        arr = np.frombuffer(blob[e["offset"]:end], dtype=np.dtype(e["dtype"]))
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    return tensors, manifest["meta"]


def save_parameter_store(path, store, meta: dict | None = None) -> Path:
    return save_archive(path, dict(store.items()), meta or {})


@torch.no_grad()
def load_into_store(store, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy archived tensors into an existing store, checking names and shapes."""
    for name, t in store.items():
        key = prefix + name
        if key not in tensors:
            raise CheckpointError(f"checkpoint is missing tensor {key!r}")
        arr = tensors[key]
        if tuple(arr.shape) != tuple(t.shape):
            raise CheckpointError(f"tensor {key!r}: shape {arr.shape} != expected {tuple(t.shape)}")
        t.copy_(torch.from_numpy(arr))
