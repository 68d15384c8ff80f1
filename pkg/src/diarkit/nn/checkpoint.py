"""Model checkpoint files.

Layout (little-endian)::

    b"DKNN" | u32 version | u32 spec_len | spec JSON (utf-8) | u32 n_tensors
    per tensor: u16 name_len | name utf-8 | u32 ndim | u32 dims[ndim] | float64 payload
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .model import check_params
from .spec import ModelSpec

MAGIC = b"DKNN"
VERSION = 1


class CheckpointError(Exception):
    pass


def checkpoint_bytes(spec: ModelSpec, params: dict) -> bytes:
    check_params(spec, params)
    spec_json = json.dumps(spec.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(spec_json)), spec_json,
             struct.pack("<I", len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(spec: ModelSpec, params: dict, path) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(checkpoint_bytes(spec, params))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_from_bytes(buf: bytes) -> tuple[ModelSpec, dict]:
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("checkpoint is truncated")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    def take_bytes(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError("checkpoint is truncated")
        out = buf[pos: pos + n]
        pos += n
        return out

    if take_bytes(4) != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    version, spec_len = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    spec = ModelSpec.from_dict(json.loads(take_bytes(spec_len).decode("utf-8")))
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (n_name,) = take("<H")
        name = take_bytes(n_name).decode("utf-8")
        (ndim,) = take("<I")
        dims = take(f"<{ndim}I")
        size = int(np.prod(dims)) if dims else 1
        params[name] = np.frombuffer(take_bytes(8 * size), dtype="<f8").reshape(dims).copy()
    check_params(spec, params)
    return spec, params


def load_checkpoint(path) -> tuple[ModelSpec, dict]:
    return checkpoint_from_bytes(Path(path).read_bytes())
