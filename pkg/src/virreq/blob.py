"""Tensor blob codec: "VRTB" magic, u32 header words, f32 payload.

Layout, all little-endian: 4-byte magic, u32 version (currently 1),
u32 ndim, u32 dims[ndim], then the row-major f32 payload.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import MalformedBlob

MAGIC = b"VRTB"
VERSION = 1


def encode_blob(array: np.ndarray) -> bytes:
    data = np.ascontiguousarray(array, dtype="<f4")
    header = struct.pack("<4sII", MAGIC, VERSION, data.ndim)
    dims = struct.pack(f"<{data.ndim}I", *data.shape)
    return header + dims + data.tobytes()


def decode_blob(payload: bytes) -> np.ndarray:
    if len(payload) < 12:
        raise MalformedBlob("blob shorter than its fixed header")
    magic, version, ndim = struct.unpack_from("<4sII", payload, 0)
    if magic != MAGIC:
        raise MalformedBlob(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedBlob(f"unsupported blob version {version}")
    if len(payload) < 12 + 4 * ndim:
        raise MalformedBlob("blob truncated inside its dims table")
    dims = struct.unpack_from(f"<{ndim}I", payload, 12)
    count = 1
    for d in dims:
        count *= d
    body = payload[12 + 4 * ndim:]
    if len(body) != 4 * count:
        raise MalformedBlob(
            f"payload holds {len(body)} bytes, dims {dims} need {4 * count}")
    flat = np.frombuffer(body, dtype="<f4")
    return flat.reshape(dims).astype(np.float32)


def save_blob(path: Union[str, Path], array: np.ndarray) -> None:
    Path(path).write_bytes(encode_blob(array))


def load_blob(path: Union[str, Path]) -> np.ndarray:
    return decode_blob(Path(path).read_bytes())
