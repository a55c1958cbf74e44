"""Checkpoint persistence: a JSON manifest plus one raw little-endian blob.

The manifest lists {name, shape, dtype, byte_offset} per array and a
sha256 of the blob; arbitrary JSON metadata (config snapshot, RNG state)
rides along under "extra". Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

MANIFEST = "manifest.json"
BLOB = "params.bin"


class CorruptCheckpointError(RuntimeError):
    pass


def save_arrays(path: str, arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        a = arrays[name]
        dt = a.dtype.newbyteorder("<")
        raw = np.ascontiguousarray(a, dtype=dt).tobytes()
        entries.append({
            "name": name,
            "shape": list(a.shape),
            "dtype": dt.str,
            "byte_offset": offset,
        })
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "arrays": entries,
        "blob_bytes": offset,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "extra": extra or {},
    }
    with open(os.path.join(path, BLOB), "wb") as fh:
        fh.write(blob)
    with open(os.path.join(path, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with open(os.path.join(path, MANIFEST), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        with open(os.path.join(path, BLOB), "rb") as fh:
            blob = fh.read()
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"unreadable checkpoint at {path}: {exc}") from exc
    if len(blob) != manifest.get("blob_bytes"):
        raise CorruptCheckpointError(
            f"blob is {len(blob)} bytes, manifest says {manifest.get('blob_bytes')}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("blob_sha256"):
        raise CorruptCheckpointError("blob checksum mismatch")
    arrays = {}
    for entry in manifest["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["byte_offset"]
        end = start + count * dt.itemsize
        if end > len(blob):
            raise CorruptCheckpointError(f"array {entry['name']} overruns blob")
        arrays[entry["name"]] = np.frombuffer(
            blob[start:end], dtype=dt).reshape(entry["shape"]).copy()
    return arrays, manifest.get("extra", {})
