"""Little-endian binary reading helpers shared by the feature and checkpoint formats."""

from __future__ import annotations

import struct

import numpy as np


class FormatError(ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def _need(self, n: int, what: str) -> None:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated while reading {what}: need {n} bytes, {len(self.buf) - self.pos} left",
                self.pos,
            )

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        self._need(size, what)
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def raw(self, n: int, what: str) -> bytes:
        self._need(n, what)
        out = bytes(self.buf[self.pos:self.pos + n])
        self.pos += n
        return out

    def floats(self, count: int, what: str) -> np.ndarray:
        n = 4 * count
        self._need(n, what)
        arr = np.frombuffer(self.buf, dtype="<f4", count=count, offset=self.pos).copy()
        self.pos += n
        return arr

    def expect_magic(self, magic: bytes) -> None:
        got = self.raw(len(magic), "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)

    def expect_end(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes", self.pos)
