"""Binary formats: attention-stream fixtures and parameter checkpoints.

Fixture:    b"ATTN" | u8 version=1 | u32 T, C, H, W | T*C*H*W float32, all little-endian.
Checkpoint: 4-byte magic | u8 version=1 | u32 n_dims | n_dims * u32 | float64 params.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

FIXTURE_MAGIC = b"ATTN"
VERSION = 1


class FormatError(ValueError):
    """Base class for malformed fixture or checkpoint files."""


class BadMagicError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


def write_fixture(path, maps):
    maps = np.asarray(maps)
    if maps.ndim != 4:
        raise DimensionMismatchError(f"attention stream must be T×C×H×W, got shape {maps.shape}")
    header = FIXTURE_MAGIC + struct.pack("<B4I", VERSION, *maps.shape)
    Path(path).write_bytes(header + maps.astype("<f4").tobytes(order="C"))


def read_fixture(path):
    raw = Path(path).read_bytes()
    if raw[:4] != FIXTURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {FIXTURE_MAGIC!r}")
    if len(raw) < 21:
        raise TruncatedPayloadError(f"{path}: truncated header ({len(raw)} bytes)")
    version, *dims = struct.unpack("<B4I", raw[4:21])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = int(np.prod(dims)) * 4
    payload = raw[21:]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    if len(payload) > expected:
        raise DimensionMismatchError(f"{path}: header dims {tuple(dims)} need {expected} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def write_checkpoint(path, magic, dims, params):
    magic = magic.encode() if isinstance(magic, str) else magic
    if len(magic) != 4:
        raise ValueError("checkpoint magic must be 4 bytes")
    dims = [int(d) for d in dims]
    header = magic + struct.pack(f"<BI{len(dims)}I", VERSION, len(dims), *dims)
    Path(path).write_bytes(header + np.asarray(params, dtype="<f8").tobytes())


def read_checkpoint(path, magic):
    """Return ``(dims, params)``; the caller checks ``dims`` against its config."""
    magic = magic.encode() if isinstance(magic, str) else magic
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {magic!r}")
    if len(raw) < 9:
        raise TruncatedPayloadError(f"{path}: truncated header")
    version, n_dims = struct.unpack("<BI", raw[4:9])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    end = 9 + 4 * n_dims
    if len(raw) < end:
        raise TruncatedPayloadError(f"{path}: truncated header")
    dims = list(struct.unpack(f"<{n_dims}I", raw[9:end]))
    payload = raw[end:]
    if len(payload) % 8:
        raise TruncatedPayloadError(f"{path}: payload is not a whole number of float64 values")
    return dims, np.frombuffer(payload, dtype="<f8").astype(np.float64)
