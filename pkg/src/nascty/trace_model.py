"""Synthetic first-round AES S-box leakage traces.

Traces are Gaussian background noise with a Hamming-weight leak of the
(optionally masked) S-box output at one sample index and, optionally, the
Hamming weight of the mask at a second index. This is the usual first-order
simulation used in place of captured datasets.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

SBOX = np.array([
    0x63, 0x7C, 0x77, 0x7B, 0xF2, 0x6B, 0x6F, 0xC5, 0x30, 0x01, 0x67, 0x2B, 0xFE, 0xD7, 0xAB, 0x76,
    0xCA, 0x82, 0xC9, 0x7D, 0xFA, 0x59, 0x47, 0xF0, 0xAD, 0xD4, 0xA2, 0xAF, 0x9C, 0xA4, 0x72, 0xC0,
    0xB7, 0xFD, 0x93, 0x26, 0x36, 0x3F, 0xF7, 0xCC, 0x34, 0xA5, 0xE5, 0xF1, 0x71, 0xD8, 0x31, 0x15,
    0x04, 0xC7, 0x23, 0xC3, 0x18, 0x96, 0x05, 0x9A, 0x07, 0x12, 0x80, 0xE2, 0xEB, 0x27, 0xB2, 0x75,
    0x09, 0x83, 0x2C, 0x1A, 0x1B, 0x6E, 0x5A, 0xA0, 0x52, 0x3B, 0xD6, 0xB3, 0x29, 0xE3, 0x2F, 0x84,
    0x53, 0xD1, 0x00, 0xED, 0x20, 0xFC, 0xB1, 0x5B, 0x6A, 0xCB, 0xBE, 0x39, 0x4A, 0x4C, 0x58, 0xCF,
    0xD0, 0xEF, 0xAA, 0xFB, 0x43, 0x4D, 0x33, 0x85, 0x45, 0xF9, 0x02, 0x7F, 0x50, 0x3C, 0x9F, 0xA8,
    0x51, 0xA3, 0x40, 0x8F, 0x92, 0x9D, 0x38, 0xF5, 0xBC, 0xB6, 0xDA, 0x21, 0x10, 0xFF, 0xF3, 0xD2,
    0xCD, 0x0C, 0x13, 0xEC, 0x5F, 0x97, 0x44, 0x17, 0xC4, 0xA7, 0x7E, 0x3D, 0x64, 0x5D, 0x19, 0x73,
    0x60, 0x81, 0x4F, 0xDC, 0x22, 0x2A, 0x90, 0x88, 0x46, 0xEE, 0xB8, 0x14, 0xDE, 0x5E, 0x0B, 0xDB,
    0xE0, 0x32, 0x3A, 0x0A, 0x49, 0x06, 0x24, 0x5C, 0xC2, 0xD3, 0xAC, 0x62, 0x91, 0x95, 0xE4, 0x79,
    0xE7, 0xC8, 0x37, 0x6D, 0x8D, 0xD5, 0x4E, 0xA9, 0x6C, 0x56, 0xF4, 0xEA, 0x65, 0x7A, 0xAE, 0x08,
    0xBA, 0x78, 0x25, 0x2E, 0x1C, 0xA6, 0xB4, 0xC6, 0xE8, 0xDD, 0x74, 0x1F, 0x4B, 0xBD, 0x8B, 0x8A,
    0x70, 0x3E, 0xB5, 0x66, 0x48, 0x03, 0xF6, 0x0E, 0x61, 0x35, 0x57, 0xB9, 0x86, 0xC1, 0x1D, 0x9E,
    0xE1, 0xF8, 0x98, 0x11, 0x69, 0xD9, 0x8E, 0x94, 0x9B, 0x1E, 0x87, 0xE9, 0xCE, 0x55, 0x28, 0xDF,
    0x8C, 0xA1, 0x89, 0x0D, 0xBF, 0xE6, 0x42, 0x68, 0x41, 0x99, 0x2D, 0x0F, 0xB0, 0x54, 0xBB, 0x16,
], dtype=np.uint8)

HW = np.array([bin(x).count("1") for x in range(256)], dtype=np.uint8)

N_CLASSES = 256


def sbox(x):
    """AES forward S-box; works on ints and integer arrays."""
    if isinstance(x, (int, np.integer)):
        return int(SBOX[int(x) & 0xFF])
    return SBOX[np.asarray(x, dtype=np.uint8)]


def intermediate(p, k, r=0, masking=True):
    """Targeted byte: ``SBOX(p ^ k) ^ r`` with masking, ``SBOX(p ^ k)`` without."""
    z = sbox(np.bitwise_xor(p, k))
    if masking:
        z = np.bitwise_xor(z, r)
    return int(z) if np.ndim(z) == 0 else z


@dataclass(frozen=True)
class TraceParams:
    n_samples_per_trace: int = 700
    leak_point_value: int = 350
    leak_point_mask: Optional[int] = None
    noise_sigma: float = 0.5
    max_desync: int = 0
    masking_enabled: bool = False
    key_byte: int = 0x4D
    seed: int = 0

    def __post_init__(self):
        n = self.n_samples_per_trace
        if n < 1:
            raise ValueError(f"n_samples_per_trace must be positive, got {n}")
        if not 0 <= self.leak_point_value < n:
            raise ValueError(f"leak_point_value {self.leak_point_value} outside [0, {n})")
        if self.leak_point_mask is not None:
            if not 0 <= self.leak_point_mask < n:
                raise ValueError(f"leak_point_mask {self.leak_point_mask} outside [0, {n})")
            if self.leak_point_mask == self.leak_point_value:
                raise ValueError("leak_point_mask must differ from leak_point_value")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0 <= self.max_desync < n:
            raise ValueError(f"max_desync {self.max_desync} outside [0, {n})")
        if not 0 <= self.key_byte <= 255:
            raise ValueError(f"key_byte {self.key_byte} outside [0, 255]")


@dataclass
class TraceSet:
    """Leakage matrix plus the per-trace bytes needed for labelling and attacks.

    ``metadata`` is in-memory bookkeeping (noise level, applied shifts,
    normalization ranges); it is not part of the binary trace file.
    """

    traces: np.ndarray
    plaintexts: np.ndarray
    keys: np.ndarray
    labels: np.ndarray
    masks: Optional[np.ndarray] = None
    normalized: bool = False
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.traces = np.ascontiguousarray(self.traces, dtype=np.float32)
        self.plaintexts = np.asarray(self.plaintexts, dtype=np.uint8)
        self.keys = np.asarray(self.keys, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=np.uint8)
        n = self.traces.shape[0]
        if self.traces.ndim != 2:
            raise ValueError("traces must be a 2-D matrix")
        for name in ("plaintexts", "keys", "labels") + (("masks",) if self.masks is not None else ()):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")

    def __len__(self):
        return self.traces.shape[0]

    @property
    def n_samples(self):
        return self.traces.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return TraceSet(
            traces=self.traces[idx],
            plaintexts=self.plaintexts[idx],
            keys=self.keys[idx],
            labels=self.labels[idx],
            masks=None if self.masks is None else self.masks[idx],
            normalized=self.normalized,
            metadata=dict(self.metadata),
        )

    def equals(self, other):
        """Field-by-field equality, bit-exact on the trace matrix."""
        if (self.masks is None) != (other.masks is None):
            return False
        return (
            self.normalized == other.normalized
            and self.traces.shape == other.traces.shape
            and self.traces.tobytes() == other.traces.tobytes()
            and np.array_equal(self.plaintexts, other.plaintexts)
            and np.array_equal(self.keys, other.keys)
            and np.array_equal(self.labels, other.labels)
            and (self.masks is None or np.array_equal(self.masks, other.masks))
        )


def generate(params: TraceParams, n_traces: int) -> TraceSet:
    if n_traces < 1:
        raise ValueError("n_traces must be positive")
    rng = np.random.default_rng(params.seed)
    plaintexts = rng.integers(0, 256, n_traces, dtype=np.uint8)
    keys = np.full(n_traces, params.key_byte, dtype=np.uint8)
    masks = rng.integers(0, 256, n_traces, dtype=np.uint8) if params.masking_enabled else None
    traces = rng.normal(0.0, params.noise_sigma, (n_traces, params.n_samples_per_trace))

    labels = sbox(plaintexts ^ keys)
    z = labels ^ masks if masks is not None else labels
    traces[:, params.leak_point_value] += HW[z]
    if params.leak_point_mask is not None and masks is not None:
        traces[:, params.leak_point_mask] += HW[masks]

    return TraceSet(
        traces=traces,
        plaintexts=plaintexts,
        keys=keys,
        labels=labels,
        masks=masks,
        metadata={"noise_sigma": params.noise_sigma, "seed": params.seed},
    )


def desynchronize(ts: TraceSet, max_desync: int, seed: int, noise_sigma: Optional[float] = None) -> TraceSet:
    """Shift every trace right by an independent uniform offset in [0, max_desync].

    Vacated leading samples get fresh Gaussian noise at the source set's noise
    level; samples pushed past the end are dropped. Applied shifts are stored
    in ``metadata["shifts"]``.
    """
    n, m = ts.traces.shape
    if not 0 <= max_desync < m:
        raise ValueError(f"max_desync {max_desync} must lie in [0, {m})")
    if noise_sigma is None:
        noise_sigma = float(ts.metadata.get("noise_sigma", 0.0))
    rng = np.random.default_rng(seed)
    shifts = rng.integers(0, max_desync + 1, n)
    fill = rng.normal(0.0, noise_sigma, (n, max_desync)).astype(np.float32)

    out = np.empty_like(ts.traces)
    for i, d in enumerate(shifts):
        out[i, d:] = ts.traces[i, : m - d]
        out[i, :d] = fill[i, :d]

    res = ts.subset(np.arange(n))
    res.traces = out
    res.metadata["shifts"] = shifts
    res.metadata["max_desync"] = max_desync
    res.metadata.setdefault("noise_sigma", noise_sigma)
    return res


class InsufficientClassError(ValueError):
    def __init__(self, label, available, needed):
        super().__init__(f"label {label} has {available} traces, {needed} needed for a balanced sample")
        self.label = label
        self.available = available
        self.needed = needed


def sample_balanced(ts: TraceSet, n_per_class: int, seed: int, return_indices=False):
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    rng = np.random.default_rng(seed)
    counts = np.bincount(ts.labels, minlength=N_CLASSES)
    short = np.flatnonzero(counts < n_per_class)
    if short.size:
        c = int(short[0])
        raise InsufficientClassError(c, int(counts[c]), n_per_class)

    chosen = [rng.choice(np.flatnonzero(ts.labels == c), n_per_class, replace=False) for c in range(N_CLASSES)]
    idx = rng.permutation(np.concatenate(chosen))
    out = ts.subset(idx)
    return (out, idx) if return_indices else out


def normalize(ts: TraceSet, reference: Optional[tuple] = None) -> TraceSet:
    """Per-sample-index min-max scaling into [-1, 1].

    With ``reference=(mins, maxs)`` the recorded ranges of another set (the
    profiling set) are applied instead of this set's own. The ranges used end
    up in ``metadata["normalization"]``.
    """
    if len(ts) == 0:
        raise ValueError("cannot normalize an empty trace set")
    x = ts.traces.astype(np.float64)
    if reference is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
    else:
        lo, hi = (np.asarray(a, dtype=np.float64) for a in reference)
    span = hi - lo
    const = span == 0
    scaled = 2.0 * (x - lo) / np.where(const, 1.0, span) - 1.0
    scaled[:, const] = 0.0

    out = replace(ts, traces=scaled, normalized=True, metadata=dict(ts.metadata))
    out.metadata["normalization"] = (lo, hi)
    return out
