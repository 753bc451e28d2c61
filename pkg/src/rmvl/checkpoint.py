"""Versioned binary checkpoint container.

Layout: an 8-byte magic, a u32 container version, a u32 header length,
a JSON header (kind tag, free-form metadata, array descriptors), then
the raw little-endian array blobs in descriptor order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RMVLCKPT"
CONTAINER_VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or mismatching checkpoint file."""


def save_container(path, kind: str, meta: dict, arrays: dict) -> None:
    """Write named float/int arrays plus a JSON descriptor header."""
    descriptors = []
    blobs = []
    for name, arr in arrays.items():
        a = np.asarray(arr)
        descriptors.append(
            {"name": name, "dtype": a.dtype.str, "shape": list(a.shape)}
        )
        blobs.append(a.tobytes())  # tobytes always emits C order
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": descriptors},
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CONTAINER_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def load_container(path, expect_kind: str | None = None):
    """Read back (kind, meta, arrays). Raises CheckpointError on mismatch."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint container")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != CONTAINER_VERSION:
            raise CheckpointError(f"unsupported container version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        arrays = {}
        for desc in header["arrays"]:
            dtype = np.dtype(desc["dtype"])
            shape = tuple(desc["shape"])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise CheckpointError(f"truncated blob {desc['name']} in {path}")
            arrays[desc["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path} holds a '{kind}' checkpoint, expected '{expect_kind}'")
    return kind, header["meta"], arrays
