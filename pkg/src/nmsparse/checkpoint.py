"""Binary checkpoint container for named tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"SPRE"
    version u16      currently 1
    count   u32      number of entries

    entry:
      name_len u16
      name     UTF-8 bytes
      dtype    u8    0 = float32, 1 = float64, 2 = binary mask (uint8)
      ndim     u8
      dims     ndim * u32
      payload  prod(dims) * itemsize bytes, little-endian

Entries keep their insertion order, names must be unique, and a write is
atomic (temp file in the same directory, then rename), so a reader never sees
a half-written checkpoint.
"""

from __future__ import annotations

import os
import struct
import tempfile
from typing import Mapping

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointError,
    DuplicateNameError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)

MAGIC = b"SPRE"
VERSION = 1

DTYPE_F32 = 0
DTYPE_F64 = 1
DTYPE_MASK = 2

_CODE_TO_DTYPE = {
    DTYPE_F32: np.dtype("<f4"),
    DTYPE_F64: np.dtype("<f8"),
    DTYPE_MASK: np.dtype("u1"),
}


def _dtype_code(arr: np.ndarray) -> int:
    t = arr.dtype.type
    if t is np.float32:
        return DTYPE_F32
    if t is np.float64:
        return DTYPE_F64
    if t in (np.uint8, np.bool_):
        return DTYPE_MASK
    raise CheckpointError(f"cannot serialize dtype {arr.dtype}; use float32, float64, or uint8")


def save_checkpoint(path: str | os.PathLike, entries: Mapping[str, np.ndarray]) -> None:
    """Write named arrays to ``path`` atomically, preserving mapping order."""
    blobs = [struct.pack("<4sHI", MAGIC, VERSION, len(entries))]
    seen: set[str] = set()
    for name, arr in entries.items():
        if name in seen:
            raise DuplicateNameError(f"duplicate checkpoint entry {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise CheckpointError(f"entry name too long ({len(name_b)} bytes)")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"entry {name!r} has too many dimensions ({arr.ndim})")
        blobs.append(struct.pack("<H", len(name_b)))
        blobs.append(name_b)
        blobs.append(struct.pack("<BB", code, arr.ndim))
        blobs.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blobs.append(np.ascontiguousarray(arr, dtype=_CODE_TO_DTYPE[code]).tobytes())
    data = b"".join(blobs)

    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp_path = tempfile.mkstemp(prefix=os.path.basename(path) + ".", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise TruncatedCheckpointError(
                f"{self.path}: file ended while reading {what}; "
                f"needed {count} bytes at offset {self.pos}, "
                f"only {len(self.data) - self.pos} remain"
            )
        out = self.data[self.pos : self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read a checkpoint back into an order-preserving name -> array dict."""
    path = os.fspath(path)
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, path)
    magic, version, count = r.unpack("<4sHI", "header")
    if magic != MAGIC:
        raise BadMagicError(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version} is not supported (reader understands {VERSION})"
        )
    entries: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"entry {i} name length")
        try:
            name = r.take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: entry {i} name is not valid UTF-8") from exc
        code, ndim = r.unpack("<BB", f"entry {name!r} dtype/ndim")
        if code not in _CODE_TO_DTYPE:
            raise CheckpointError(f"{path}: entry {name!r} has unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}I", f"entry {name!r} dims")
        dtype = _CODE_TO_DTYPE[code]
        n_items = 1
        for d in dims:
            n_items *= d
        payload = r.take(n_items * dtype.itemsize, f"entry {name!r} payload")
        if name in entries:
            raise DuplicateNameError(f"{path}: duplicate checkpoint entry {name!r}")
        arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
        if code == DTYPE_F32:
            arr = arr.astype(np.float32)
        elif code == DTYPE_F64:
            arr = arr.astype(np.float64)
        else:
            arr = arr.astype(np.uint8)
        entries[name] = arr
    return entries
