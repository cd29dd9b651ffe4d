"""Binary container for named float64 arrays.

Layout, all integers little-endian:

    magic   4 bytes  b"IPCL"
    version u32
    count   u32
    entry * count:
        name_len u32, name utf-8
        rank     u32
        extents  rank * u64
        payload  prod(extents) * f64, C order

Loading replays the exact bytes written; round-trips are bit-identical.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import CountMismatchError, MagicError, ParseError, ShapeError, TruncatedError

MAGIC = b"IPCL"
VERSION = 1
_MAX_RANK = 8
_MAX_ELEMENTS = 1 << 40


def save_checkpoint(path, arrays, version=VERSION):
    """arrays: mapping name -> ndarray, written in mapping order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", version, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for ext in arr.shape:
                fh.write(struct.pack("<Q", ext))
            fh.write(arr.astype("<f8", copy=False).tobytes())


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise TruncatedError(f"file ends inside {what} (needed {n} bytes at offset {self.pos})")
        chunk = self.blob[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path):
    """Returns (version, dict name -> float64 ndarray) in file order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    count = r.u32("entry count")
    arrays = {}
    for i in range(count):
        name_len = r.u32(f"entry {i} name length")
        try:
            name = r.take(name_len, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"entry {i} name is not valid utf-8") from exc
        if name in arrays:
            raise ParseError(f"duplicate entry name {name!r}")
        rank = r.u32(f"entry {i} rank")
        if rank > _MAX_RANK:
            raise ParseError(f"entry {name!r} declares rank {rank}")
        extents = tuple(r.u64(f"entry {i} extent") for _ in range(rank))
        numel = 1
        for ext in extents:
            numel *= ext
        if numel > _MAX_ELEMENTS:
            raise ParseError(f"entry {name!r} declares {numel} elements")
        payload = r.take(numel * 8, f"entry {i} payload")
        arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(extents).copy()
    if r.pos != len(blob):
        raise CountMismatchError(
            f"{len(blob) - r.pos} trailing bytes after the {count} declared entries"
        )
    return version, arrays


def state_of(params):
    """Snapshot parameters as name -> copied ndarray, in list order."""
    out = {}
    for p in params:
        if p.name in out:
            raise ParseError(f"duplicate parameter name {p.name!r}")
        out[p.name] = p.value.data.copy()
    return out


def load_state(params, arrays):
    """Copy arrays into parameters by name, requiring an exact match."""
    names = {p.name for p in params}
    missing = names - set(arrays)
    extra = set(arrays) - names
    if missing or extra:
        raise CountMismatchError(
            f"parameter names do not line up: missing {sorted(missing)}, extra {sorted(extra)}"
        )
    for p in params:
        arr = arrays[p.name]
        if arr.shape != p.value.data.shape:
            raise ShapeError(
                f"{p.name}: stored shape {arr.shape} does not match parameter {p.value.data.shape}"
            )
        p.value.data[...] = arr
