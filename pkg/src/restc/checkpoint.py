"""Binary checkpoint container.

Layout (little-endian)::

    b"RSTC1"
    u32 metadata length, metadata as UTF-8 JSON
    u32 record count
    per record: u32 name length, UTF-8 name, u32 ndim, u64 * ndim dims,
                float64 * prod(dims) row-major data
"""
import json
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"RSTC1"
FORMAT_VERSION = 1


def write_checkpoint(path, metadata, tensors):
    meta = json.dumps({"format_version": FORMAT_VERSION, **metadata}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path):
    """Returns ``(metadata, {name: array})``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise CheckpointError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (meta_len,) = take("<I")
    meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {meta.get('format_version')} is not supported (expected {FORMAT_VERSION})"
        )
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        end = pos + 8 * n
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated tensor {name!r}")
        tensors[name] = np.frombuffer(blob[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
    return meta, tensors
