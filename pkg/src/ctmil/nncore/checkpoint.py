"""Binary checkpoint format for named float32 tensors.

Layout (little-endian throughout):

    magic "MILC" | version u32 (=1) | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8
                | dims u32 x rank | payload f32 row-major

Round trips are bit-exact for float32 tensors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MILC_MAGIC = b"MILC"
MILC_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    names = list(tensors)
    if len(set(names)) != len(names):
        raise FormatError("tensor names must be unique")
    with open(path, "wb") as fh:
        fh.write(MILC_MAGIC)
        fh.write(struct.pack("<II", MILC_VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk


def load_checkpoint(path: str | Path,
                    expected: dict[str, tuple[int, ...]] | None = None,
                    ) -> dict[str, np.ndarray]:
    """Load all tensors; optionally validate names and shapes.

    With ``expected`` given, names present in the file but not expected
    (and vice versa) raise, listing the offenders, as do shape
    mismatches.
    """
    with open(path, "rb") as fh:
        rd = _Reader(fh.read(), path)
    if rd.take(4) != MILC_MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, count = struct.unpack("<II", rd.take(8))
    if version != MILC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", rd.take(2))
        name = rd.take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", rd.take(1))
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank)) if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = rd.take(4 * size)
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
        tensors[name] = arr.astype(np.float32)
    if expected is not None:
        unknown = sorted(set(tensors) - set(expected))
        if unknown:
            raise FormatError(f"{path}: unknown tensors {unknown}")
        missing = sorted(set(expected) - set(tensors))
        if missing:
            raise FormatError(f"{path}: missing tensors {missing}")
        for name, shape in expected.items():
            if tensors[name].shape != tuple(shape):
                raise FormatError(
                    f"{path}: tensor {name!r} has shape "
                    f"{tensors[name].shape}, expected {tuple(shape)}"
                )
    return tensors
