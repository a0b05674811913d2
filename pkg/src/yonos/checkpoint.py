"""Versioned binary checkpoint format (.ysrc) for named float32 tensors.

Layout: magic "YSRC" | version u32 LE | header_len u64 LE | JSON header
mapping tensor name -> {"shape": [...], "offset": bytes} | raw little-
endian float32 payload. Tensors are stored in sorted-name order with
contiguous, non-overlapping extents, so save bytes are canonical and
load(save(x)) round-trips bit-identically.

Model-level metadata (architecture config, scale, provenance) lives in
a JSON sidecar next to the checkpoint, keeping the header strictly a
tensor table.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"YSRC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict):
    """Write named float32 tensors; names are sorted for canonical bytes."""
    names = sorted(tensors)
    header = {}
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        header[name] = {"shape": list(arr.shape), "offset": offset}
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(hdr)))
        fh.write(hdr)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into {name: float32 array}; validates layout."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    (hdr_len,) = struct.unpack_from("<Q", blob, 8)
    hdr_start = 16
    payload_start = hdr_start + hdr_len
    if payload_start > len(blob):
        raise CheckpointError(f"truncated header in {path}")
    try:
        header = json.loads(blob[hdr_start:payload_start].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt header in {path}: {exc}") from exc
    payload = blob[payload_start:]
    extents = []
    tensors = {}
    for name, entry in header.items():
        shape = tuple(int(d) for d in entry["shape"])
        offset = int(entry["offset"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        extents.append((offset, offset + nbytes, name))
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointError(f"tensor {name} extent outside payload in {path}")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset)
        tensors[name] = arr.reshape(shape).copy()
    extents.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(extents, extents[1:]):
        if s1 < e0:
            raise CheckpointError(f"overlapping tensors {n0} and {n1} in {path}")
    total = sum(e - s for s, e, _ in extents)
    if total != len(payload):
        raise CheckpointError(
            f"payload length mismatch in {path}: header claims {total}, file has {len(payload)}"
        )
    return tensors


def _meta_path(path):
    return Path(str(path) + ".meta.json")


def save_meta(path, meta: dict):
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_meta(path) -> dict:
    mp = _meta_path(path)
    if not mp.exists():
        raise CheckpointError(f"missing checkpoint sidecar {mp}")
    with open(mp, encoding="utf-8") as fh:
        return json.load(fh)
