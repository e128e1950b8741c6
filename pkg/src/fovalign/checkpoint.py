"""Binary checkpoint format for trained parameters.

Layout (little-endian):

    magic  b"BICK"
    u32    format version (currently 1)
    u32    manifest length, then that many bytes of UTF-8 JSON; the
           manifest carries an "arrays" list of {name, shape} in payload
           order plus run metadata (config hash, views, dims, ...)
    f32[]  the arrays, row-major, in manifest order

Parameters are trained in float64 and stored as float32; `load_checkpoint`
returns float64 arrays, so a save/load round trip is exact at float32
precision and bit-stable across runs.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

__all__ = ["CHECKPOINT_MAGIC", "save_checkpoint", "load_checkpoint"]

CHECKPOINT_MAGIC = b"BICK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], metadata: dict) -> None:
    if "arrays" in metadata:
        raise ValueError('metadata key "arrays" is reserved')
    order = sorted(arrays)
    manifest = dict(metadata)
    manifest["arrays"] = [
        {"name": name, "shape": list(np.asarray(arrays[name]).shape)} for name in order
    ]
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in order:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        head = fh.read(8)
        if len(head) != 8:
            raise FormatError(f"{path}: truncated checkpoint header")
        version, manifest_len = struct.unpack("<II", head)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        blob = fh.read(manifest_len)
        if len(blob) != manifest_len:
            raise FormatError(f"{path}: truncated checkpoint manifest")
        try:
            manifest = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed checkpoint manifest: {exc}") from exc
        if not isinstance(manifest, dict) or "arrays" not in manifest:
            raise FormatError(f"{path}: checkpoint manifest lacks the array table")
        payload = fh.read()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["arrays"]:
        name, shape = entry["name"], tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"{path}: payload ended inside array {name!r}")
        arr = np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        arrays[name] = arr
        offset += nbytes
    if offset != len(payload):
        raise FormatError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return arrays, manifest
