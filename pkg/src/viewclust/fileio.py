"""CROCFEAT / CROCMASK binary files.

Both formats share a 20-byte little-endian header: 8 magic bytes, then three
unsigned 32-bit integers (version and the two dimensions). Feature payloads are
row-major float32, mask payloads row-major uint16. Writes go to a temporary
file in the target directory that is renamed into place.
"""
from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from viewclust.errors import BadMagicError, FormatError, InputError, ShapeError, TruncatedError, VersionError

FEATURE_MAGIC = b"CROCFEAT"
MASK_MAGIC = b"CROCMASK"
VERSION = 1
_HEADER = struct.Struct("<8sIII")
HEADER_SIZE = _HEADER.size  # 20
_U32_MAX = 2**32 - 1


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _encode(magic, a, b, payload: bytes):
    return _HEADER.pack(magic, VERSION, a, b) + payload


def _decode(data: bytes, magic, itemsize, what):
    if len(data) < HEADER_SIZE:
        if data[: len(magic)] != magic[: len(data)]:
            raise BadMagicError(f"not a {magic.decode()} file", 0)
        raise TruncatedError(f"{what} header truncated", len(data), HEADER_SIZE, len(data))
    got, version, a, b = _HEADER.unpack_from(data)
    if got != magic:
        raise BadMagicError(f"not a {magic.decode()} file: magic {got!r}", 0)
    if version != VERSION:
        raise VersionError(f"unsupported {what} version {version} (expected {VERSION})", 8)
    expected = a * b * itemsize
    actual = len(data) - HEADER_SIZE
    if actual < expected:
        raise TruncatedError(f"{what} payload truncated", len(data), expected, actual)
    if actual > expected:
        raise FormatError(
            f"{what} has {actual - expected} trailing bytes after a {expected}-byte payload",
            HEADER_SIZE + expected,
        )
    return a, b


def encode_features(m) -> bytes:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {m.shape}")
    if max(m.shape) > _U32_MAX:
        raise ShapeError(f"feature matrix too large for the header: {m.shape}")
    payload = np.ascontiguousarray(m, dtype="<f4").tobytes()
    return _encode(FEATURE_MAGIC, m.shape[0], m.shape[1], payload)


def decode_features(data: bytes) -> np.ndarray:
    n, d = _decode(data, FEATURE_MAGIC, 4, "feature file")
    return np.frombuffer(data, dtype="<f4", count=n * d, offset=HEADER_SIZE).reshape(n, d).astype(np.float32)


def encode_mask(labels) -> bytes:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        if not np.array_equal(labels, np.round(labels)):
            raise InputError("mask labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise InputError("mask labels must lie in [0, 65535]")
    payload = np.ascontiguousarray(labels, dtype="<u2").tobytes()
    return _encode(MASK_MAGIC, labels.shape[0], labels.shape[1], payload)


def decode_mask(data: bytes) -> np.ndarray:
    h, w = _decode(data, MASK_MAGIC, 2, "mask file")
    return np.frombuffer(data, dtype="<u2", count=h * w, offset=HEADER_SIZE).reshape(h, w).astype(np.uint16)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def read_features(path) -> np.ndarray:
    """Load an ``n_tokens x dim`` float32 matrix."""
    return decode_features(_read(path))


def write_features(path, m):
    atomic_write(path, encode_features(m))


def read_mask(path) -> np.ndarray:
    """Load a ``height x width`` uint16 label mask."""
    return decode_mask(_read(path))


def write_mask(path, labels):
    atomic_write(path, encode_mask(labels))
