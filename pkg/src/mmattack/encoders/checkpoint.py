"""MMAL1 checkpoint container.

Layout (all integers little-endian)::

    b"MMAL1"  u16 version  u32 header_len  header (UTF-8 JSON)
    u32 n_params
    per parameter: u16 name_len, name, u8 ndim, u32 * ndim shape, float32 * size data

The JSON header holds the model kind, its config and free-form metadata.
Records are written in sorted name order so equal models give equal bytes.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelConfig, VLPModel, build_model

MAGIC = b"MMAL1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: VLPModel, metadata: dict | None = None) -> bytes:
    header = {"kind": model.kind, "config": model.config.to_dict(), "metadata": metadata or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<HI", VERSION, len(head)))
    out.write(head)
    out.write(struct.pack("<I", len(model.params)))
    for name in sorted(model.params):
        value = np.asarray(model.params[name])
        raw = name.encode()
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", value.ndim))
        out.write(struct.pack(f"<{value.ndim}I", *value.shape))
        out.write(value.astype("<f4").tobytes())
    return out.getvalue()


def loads(blob: bytes) -> tuple[VLPModel, dict]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise CheckpointError("not an MMAL1 checkpoint")
    version, head_len = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(bytes(take(head_len)).decode())
        config = ModelConfig(**header["config"])
        kind = header["kind"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * size), dtype="<f4")
        params[name] = data.astype(np.float64).reshape(shape)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last record")
    return build_model(kind, config, params), header.get("metadata", {})


def save_checkpoint(model: VLPModel, path, metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(model, metadata))


def load_checkpoint(path) -> tuple[VLPModel, dict]:
    """Model and the metadata dict stored with it."""
    return loads(Path(path).read_bytes())
