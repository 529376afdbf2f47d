"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic       8 bytes  b"GTCKPT\\x00\\x01"
    version     uint32
    meta_len    uint32, followed by meta_len bytes of UTF-8 JSON (sorted keys)
    count       uint32
    count times:
        name_len  uint16, name (UTF-8)
        dtype     uint8  (4 = float32, 8 = float64)
        ndim      uint8, then ndim x uint32 dims
        data      prod(dims) little-endian floats

Tensor names: model parameters use their dotted module path
(``encoder.blocks.0.attn.w_q``); optimizer moments are stored as
``adam.m.<name>`` and ``adam.v.<name>``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GTCKPT\x00\x01"
VERSION = 1

_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out += struct.pack("<I", len(meta_bytes)) + meta_bytes
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        size = arr.dtype.itemsize
        if size not in _DTYPES or arr.dtype.kind != "f":
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", size, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[size]).tobytes()
    return bytes(out)


def loads(buf: bytes, expect_version: int = VERSION) -> tuple[dict[str, np.ndarray], dict]:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    pos = len(MAGIC)
    (version,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if version != expect_version:
        raise CheckpointError(f"checkpoint version {version} does not match supported version {expect_version}")
    (meta_len,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    meta = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        size, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dt = _DTYPES[size]
        n = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += n * size
    if pos != len(buf):
        raise CheckpointError("trailing bytes after the last tensor")
    return tensors, meta


def save(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(tensors, meta))
    tmp.replace(path)


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
