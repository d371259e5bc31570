"""Parameter checkpoints in the ``MOVP`` binary layout.

Layout (little-endian)::

    b"MOVP" | version u32 | count u32
    per parameter: name_len u16 | name utf-8 | rank u8 | dims u32 * rank | f32 * prod(dims)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..binio import FormatError, Reader

MAGIC = b"MOVP"
VERSION = 1


def encode_params(params: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value))
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValueError(f"rank {arr.ndim} too large for {name}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_params(buf: bytes) -> dict[str, np.ndarray]:
    r = Reader(buf)
    r.expect_magic(MAGIC)
    version = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    count = r.unpack("<I", "parameter count")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        start = r.pos
        n = r.unpack("<H", "name length")
        try:
            name = r.raw(n, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("parameter name is not utf-8", start + 2) from exc
        rank = r.unpack("<B", "rank")
        dims = r.unpack(f"<{rank}I", "dims") if rank else ()
        dims = (dims,) if isinstance(dims, int) else tuple(dims)
        values = r.floats(int(np.prod(dims, dtype=np.int64)), f"values of {name!r}")
        if name in out:
            raise FormatError(f"duplicate parameter {name!r}", start)
        out[name] = values.reshape(dims)
    r.expect_end()
    return out


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_params(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode_params(Path(path).read_bytes())
