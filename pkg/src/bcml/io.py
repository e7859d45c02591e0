"""MatrixBlob persistence and small deterministic writers (CSV, JSON).

Blob layout, all little-endian::

    b"BCML" | u16 version | u32 rows | u32 cols | rows*cols f64 row-major | u32 CRC32(payload)
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"BCML"
VERSION = 1
_HEADER = struct.Struct("<4sHII")
_TRAILER = struct.Struct("<I")


class BlobError(ValueError):
    pass


class BlobChecksumError(BlobError):
    pass


class BlobVersionError(BlobError):
    pass


class BlobTruncatedError(BlobError):
    pass


def encode(M: np.ndarray) -> bytes:
    A = np.asarray(M, dtype="<f8")
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2:
        raise BlobError("only 2D matrices can be stored")
    rows, cols = A.shape
    if rows >= 2**32 or cols >= 2**32:
        raise BlobError("matrix too large for a u32 header")
    payload = np.ascontiguousarray(A).tobytes()
    return _HEADER.pack(MAGIC, VERSION, rows, cols) + payload + _TRAILER.pack(zlib.crc32(payload))


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise BlobTruncatedError(f"blob has {len(buf)} bytes, header needs {_HEADER.size}")
    magic, version, rows, cols = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BlobError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BlobVersionError(f"blob version {version}, reader supports {VERSION}")
    n = rows * cols * 8
    need = _HEADER.size + n + _TRAILER.size
    if len(buf) < need:
        raise BlobTruncatedError(f"blob has {len(buf)} bytes, header promises {need}")
    if len(buf) > need:
        raise BlobError(f"{len(buf) - need} trailing bytes after the checksum")
    payload = buf[_HEADER.size:_HEADER.size + n]
    (crc,) = _TRAILER.unpack_from(buf, _HEADER.size + n)
    if zlib.crc32(payload) != crc:
        raise BlobChecksumError("payload checksum mismatch")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(float)


def save(path, M: np.ndarray) -> str:
    """Write a blob; returns the sha256 of the written bytes."""
    data = encode(M)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def write_json(path, obj) -> None:
    """Sorted keys and fixed formatting so identical content gives identical bytes."""
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.bool_, bool)):
        return int(v)
    return v


def content_hash(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(hashlib.sha256(p).digest())
    return h.hexdigest()
