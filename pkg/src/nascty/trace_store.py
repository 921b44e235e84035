"""Flat little-endian binary trace files.

Layout::

    header (64 bytes)   magic "NASCTY01" | u16 version | u64 n_traces | u32 n_samples | u32 flags | zero padding
    traces              float32, row-major, n_traces * n_samples
    plaintexts          u8 * n_traces
    keys                u8 * n_traces
    labels              u8 * n_traces
    masks               u8 * n_traces   (only when FLAG_HAS_MASKS)
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .trace_model import TraceSet

MAGIC = b"NASCTY01"
FORMAT_VERSION = 1
HEADER_SIZE = 64
_HEADER = struct.Struct("<8sHQII")

FLAG_HAS_MASKS = 1 << 0
FLAG_NORMALIZED = 1 << 1


class TraceFileError(Exception):
    """Base class for unreadable trace files."""


class BadMagicError(TraceFileError):
    pass


class UnsupportedVersionError(TraceFileError):
    pass


class CorruptFileError(TraceFileError):
    """Payload size disagrees with the header; ``section`` names what is missing."""

    def __init__(self, message, section=None):
        super().__init__(message)
        self.section = section


def payload_size(n_traces, n_samples, has_masks):
    return 4 * n_traces * n_samples + (4 if has_masks else 3) * n_traces


def encode_traceset(ts: TraceSet) -> bytes:
    n, m = ts.traces.shape
    flags = (FLAG_HAS_MASKS if ts.masks is not None else 0) | (FLAG_NORMALIZED if ts.normalized else 0)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, n, m, flags).ljust(HEADER_SIZE, b"\0")
    parts = [
        header,
        ts.traces.astype("<f4", copy=False).tobytes(order="C"),
        ts.plaintexts.tobytes(),
        ts.keys.tobytes(),
        ts.labels.tobytes(),
    ]
    if ts.masks is not None:
        parts.append(ts.masks.tobytes())
    return b"".join(parts)


def decode_traceset(buf: bytes) -> TraceSet:
    if len(buf) < HEADER_SIZE:
        raise CorruptFileError(f"file is {len(buf)} bytes, shorter than the {HEADER_SIZE}-byte header", "header")
    magic, version, n, m, flags = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version} (supported: {FORMAT_VERSION})")
    has_masks = bool(flags & FLAG_HAS_MASKS)

    sections = [("traces", 4 * n * m), ("plaintexts", n), ("keys", n), ("labels", n)]
    if has_masks:
        sections.append(("masks", n))
    expected = HEADER_SIZE + payload_size(n, m, has_masks)
    if len(buf) != expected:
        if len(buf) > expected:
            raise CorruptFileError(f"size mismatch: {len(buf) - expected} trailing bytes after payload", "trailer")
        pos = HEADER_SIZE
        for name, size in sections:
            if pos + size > len(buf):
                raise CorruptFileError(
                    f"size mismatch: section '{name}' truncated ({len(buf) - pos} of {size} bytes)", name
                )
            pos += size

    pos = HEADER_SIZE
    arrays = {}
    for name, size in sections:
        dtype = "<f4" if name == "traces" else np.uint8
        arrays[name] = np.frombuffer(buf, dtype=dtype, count=size // np.dtype(dtype).itemsize, offset=pos)
        pos += size
    return TraceSet(
        traces=arrays["traces"].reshape(n, m).astype(np.float32),
        plaintexts=arrays["plaintexts"].copy(),
        keys=arrays["keys"].copy(),
        labels=arrays["labels"].copy(),
        masks=arrays["masks"].copy() if has_masks else None,
        normalized=bool(flags & FLAG_NORMALIZED),
    )


def write_traceset(ts: TraceSet, path) -> None:
    data = encode_traceset(ts)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_traceset(path) -> TraceSet:
    with open(path, "rb") as fh:
        return decode_traceset(fh.read())
