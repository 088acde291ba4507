"""Versioned binary container for feature caches, weights, and checkpoints.

Layout (all integers little-endian):

    magic "IFMR" | version u16 | original_h u32 | original_w u32
    | padded_h u32 | padded_w u32 | n_records u16 | records...
    | checksum u64

Record kinds:
    0: feature level   -> level_id u16, h u32, w u32, c u32, float32 payload
    1: named tensor    -> name_len u16, name utf8, ndim u8, dims u32..., payload
    2: metadata text   -> name_len u16, name utf8, byte_len u32, utf8 payload

The checksum is the first 8 bytes of BLAKE2b over everything before it.
Files are written to a temp path and atomically renamed, so concurrent
readers never observe partial files; a written cache is immutable.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile

import numpy as np

from liveseg.encoder import FeatureMapSet
from liveseg.numerics import Tensor

MAGIC = b"IFMR"
VERSION = 1

_KIND_LEVEL = 0
_KIND_TENSOR = 1
_KIND_META = 2


class CacheFormatError(Exception):
    """Structured parse/validation failure; message names the byte offset."""


def _checksum(blob: bytes) -> bytes:
    return hashlib.blake2b(blob, digest_size=8).digest()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise CacheFormatError(
                f"truncated file: needed {n} bytes for {what} at offset {self.off}, "
                f"have {len(self.blob) - self.off}")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u8(self, what):
        return self.take(1, what)[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def _write_atomic(path: str, blob: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _container_bytes(dims: tuple, records: list[bytes]) -> bytes:
    head = MAGIC + struct.pack("<H", VERSION) + struct.pack("<IIII", *dims)
    head += struct.pack("<H", len(records))
    body = head + b"".join(records)
    return body + _checksum(body)


def _parse_container(blob: bytes, path: str):
    if len(blob) < 22:
        raise CacheFormatError(f"{path}: file too short ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise CacheFormatError(f"{path}: bad magic {blob[:4]!r} at offset 0")
    version = struct.unpack("<H", blob[4:6])[0]
    if version != VERSION:
        raise CacheFormatError(f"{path}: unknown version {version} at offset 4")
    if _checksum(blob[:-8]) != blob[-8:]:
        raise CacheFormatError(f"{path}: checksum mismatch over {len(blob) - 8} bytes")
    r = _Reader(blob[:-8])
    r.off = 6
    dims = struct.unpack("<IIII", r.take(16, "dims"))
    n = r.u16("record count")
    levels, tensors, meta = {}, {}, {}
    for i in range(n):
        kind = r.u8(f"record {i} kind")
        if kind == _KIND_LEVEL:
            level_id = r.u16("level id")
            h = r.u32("level h")
            w = r.u32("level w")
            c = r.u32("level c")
            count = h * w * c
            payload = r.take(4 * count, f"level {level_id} payload")
            arr = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
            levels[level_id] = arr
        elif kind == _KIND_TENSOR:
            nlen = r.u16("tensor name length")
            name = r.take(nlen, "tensor name").decode("utf-8")
            ndim = r.u8("tensor ndim")
            shape = tuple(r.u32(f"dim {d} of {name}") for d in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            payload = r.take(4 * count, f"tensor {name} payload")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape)
        elif kind == _KIND_META:
            nlen = r.u16("meta name length")
            name = r.take(nlen, "meta name").decode("utf-8")
            blen = r.u32("meta length")
            meta[name] = r.take(blen, f"meta {name}").decode("utf-8")
        else:
            raise CacheFormatError(f"{path}: unknown record kind {kind} at offset {r.off - 1}")
    if r.off != len(r.blob):
        raise CacheFormatError(f"{path}: {len(r.blob) - r.off} trailing bytes at offset {r.off}")
    return dims, levels, tensors, meta


def _level_record(level_id: int, arr: np.ndarray) -> bytes:
    h, w, c = arr.shape
    head = struct.pack("<BHIII", _KIND_LEVEL, level_id, h, w, c)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _tensor_record(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode("utf-8")
    head = struct.pack("<BH", _KIND_TENSOR, len(nb)) + nb
    head += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _meta_record(name: str, text: str) -> bytes:
    nb, tb = name.encode("utf-8"), text.encode("utf-8")
    return struct.pack("<BH", _KIND_META, len(nb)) + nb + struct.pack("<I", len(tb)) + tb


# --------------------------------------------------------------------------
# public API

def cache_write(fs: FeatureMapSet, path: str) -> None:
    """Persist a FeatureMapSet; write-then-read round-trips bit-exactly."""
    dims = (fs.original_h, fs.original_w, fs.padded_h, fs.padded_w)
    records = [_level_record(i + 1, lvl.data) for i, lvl in enumerate(fs.levels)]
    _write_atomic(path, _container_bytes(dims, records))


def cache_read(path: str) -> FeatureMapSet:
    """Load a FeatureMapSet, validating checksum and the shape law."""
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CacheFormatError(f"{path}: {e}") from e
    dims, levels, tensors, _ = _parse_container(blob, path)
    if tensors:
        raise CacheFormatError(f"{path}: feature cache contains named tensors")
    if sorted(levels) != [1, 2, 3, 4]:
        raise CacheFormatError(f"{path}: expected levels 1..4, got {sorted(levels)}")
    oh, ow, ph, pw = dims
    try:
        return FeatureMapSet([Tensor(levels[i]) for i in (1, 2, 3, 4)], oh, ow, ph, pw)
    except ValueError as e:
        raise CacheFormatError(f"{path}: shape law violation: {e}") from e


def weights_write(named: dict[str, np.ndarray], path: str,
                  meta: dict[str, str] | None = None) -> None:
    """Persist named tensors (+ optional metadata strings)."""
    records = [_meta_record(k, v) for k, v in sorted((meta or {}).items())]
    records += [_tensor_record(k, np.asarray(v)) for k, v in named.items()]
    _write_atomic(path, _container_bytes((0, 0, 0, 0), records))


def weights_read(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CacheFormatError(f"{path}: {e}") from e
    _, levels, tensors, meta = _parse_container(blob, path)
    if levels:
        raise CacheFormatError(f"{path}: weight file contains feature levels")
    return tensors, meta
