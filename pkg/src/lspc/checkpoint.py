"""LSPC-CKPT v1: a one-line JSON manifest followed by a float32 little-endian
blob holding all tensors back to back at the declared byte offsets."""

from __future__ import annotations

import json

import numpy as np

from .errors import FormatError

MAGIC = "LSPC-CKPT"
VERSION = 1

F32 = np.dtype("<f4")


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=F32).tobytes()
        entries.append({"name": name, "shape": [int(d) for d in arr.shape],
                        "offset": offset, "len": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = {"magic": MAGIC, "version": VERSION, "tensors": entries, "dtype": "f32le"}
    with open(path, "wb") as f:
        f.write((json.dumps(manifest, separators=(",", ":")) + "\n").encode("utf-8"))
        f.write(b"".join(blobs))


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing manifest line")
    try:
        manifest = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable manifest: {exc}") from exc
    if manifest.get("magic") != MAGIC:
        raise FormatError(f"bad magic {manifest.get('magic')!r}")
    if manifest.get("version") != VERSION:
        raise FormatError(f"unsupported version {manifest.get('version')!r}")
    if manifest.get("dtype") != "f32le":
        raise FormatError(f"unsupported dtype {manifest.get('dtype')!r}")
    blob = raw[nl + 1:]
    out: dict[str, np.ndarray] = {}
    total = 0
    for entry in manifest["tensors"]:
        name = entry["name"]
        shape = tuple(int(d) for d in entry["shape"])
        offset = int(entry["offset"])
        length = int(entry["len"])
        n_items = int(np.prod(shape)) if shape else 1
        if length != n_items * F32.itemsize:
            raise FormatError(f"tensor {name}: len {length} does not match shape {shape}")
        if offset + length > len(blob):
            raise FormatError(f"truncated blob: tensor {name} extends past end of file")
        out[name] = np.frombuffer(blob, dtype=F32, count=n_items,
                                  offset=offset).reshape(shape).copy()
        total = max(total, offset + length)
    if total != len(blob):
        raise FormatError(f"manifest/blob length mismatch: {total} declared, {len(blob)} present")
    return out
