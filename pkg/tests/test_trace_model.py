import numpy as np
import pytest
from hypothesis import given, strategies as st

from nascty.trace_model import (HW, SBOX, InsufficientClassError, TraceParams, TraceSet, desynchronize, generate,
                                intermediate, normalize, sample_balanced, sbox)

# FIPS-197 Figure 7, first two rows and a few scattered entries, typed in independently
FIPS_ROWS = {
    0x00: "63 7c 77 7b f2 6b 6f c5 30 01 67 2b fe d7 ab 76",
    0x10: "ca 82 c9 7d fa 59 47 f0 ad d4 a2 af 9c a4 72 c0",
    0xf0: "8c a1 89 0d bf e6 42 68 41 99 2d 0f b0 54 bb 16",
}


def test_sbox_known_entries():
    assert sbox(0x00) == 0x63
    assert sbox(0x53) == 0xED
    for start, row in FIPS_ROWS.items():
        assert [sbox(start + i) for i in range(16)] == [int(b, 16) for b in row.split()]


def test_sbox_is_permutation():
    assert sorted(SBOX.tolist()) == list(range(256))


def _gf_inv(a):
    # brute-force multiplicative inverse in GF(2^8) mod x^8+x^4+x^3+x+1
    def mul(x, y):
        r = 0
        while y:
            if y & 1:
                r ^= x
            x = ((x << 1) ^ 0x11B) if x & 0x80 else x << 1
            y >>= 1
        return r
    return 0 if a == 0 else next(b for b in range(1, 256) if mul(a, b) == 1)


def test_sbox_matches_affine_construction():
    def rotl(x, n):
        return ((x << n) | (x >> (8 - n))) & 0xFF

    for x in range(256):
        b = _gf_inv(x)
        assert sbox(x) == b ^ rotl(b, 1) ^ rotl(b, 2) ^ rotl(b, 3) ^ rotl(b, 4) ^ 0x63


def test_intermediate_examples():
    assert intermediate(0x00, 0x00, 0x00, masking=True) == 0x63
    for a in (0, 0x5A, 0xFF):
        assert intermediate(a, a, 0x63, masking=True) == 0x00
    assert intermediate(0x12, 0x34, 0x56, masking=True) == sbox(0x26) ^ 0x56
    assert intermediate(0x12, 0x34, 0x56, masking=False) == sbox(0x26)


def test_intermediate_vectorized_matches_scalar(rng):
    p, k, r = (rng.integers(0, 256, 200, dtype=np.uint8) for _ in range(3))
    got = intermediate(p, k, r)
    assert got.tolist() == [SBOX[a ^ b] ^ c for a, b, c in zip(p.tolist(), k.tolist(), r.tolist())]


def test_params_validation():
    with pytest.raises(ValueError):
        TraceParams(n_samples_per_trace=10, leak_point_value=10)
    with pytest.raises(ValueError):
        TraceParams(n_samples_per_trace=10, leak_point_value=3, leak_point_mask=3)
    with pytest.raises(ValueError):
        TraceParams(n_samples_per_trace=10, leak_point_value=3, max_desync=10)
    with pytest.raises(ValueError):
        TraceParams(noise_sigma=-1)


def test_zero_noise_exposes_leak():
    ts = generate(TraceParams(n_samples_per_trace=20, leak_point_value=7, noise_sigma=0, key_byte=0, seed=3), 500)
    zero = np.flatnonzero(ts.plaintexts == 0)
    assert HW[0x63] == 4
    assert zero.size and np.all(ts.traces[zero, 7] == 4)
    assert np.all(ts.traces[:, 7] == HW[SBOX[ts.plaintexts]])
    assert np.count_nonzero(np.delete(ts.traces, 7, axis=1)) == 0


def test_zero_noise_masked_points():
    p = TraceParams(n_samples_per_trace=30, leak_point_value=10, leak_point_mask=20, noise_sigma=0,
                    masking_enabled=True, key_byte=0x2B, seed=9)
    ts = generate(p, 400)
    z = SBOX[ts.plaintexts ^ ts.keys] ^ ts.masks
    assert np.array_equal(ts.traces[:, 10], HW[z].astype(np.float32))
    assert np.array_equal(ts.traces[:, 20], HW[ts.masks].astype(np.float32))
    # labels stay on the unmasked S-box output
    assert np.array_equal(ts.labels, SBOX[ts.plaintexts ^ ts.keys])


def test_generate_deterministic():
    p = TraceParams(n_samples_per_trace=50, leak_point_value=25, seed=42)
    assert generate(p, 100).equals(generate(p, 100))
    assert not generate(p, 100).equals(generate(TraceParams(n_samples_per_trace=50, leak_point_value=25, seed=43), 100))


def test_desync_zero_is_identity():
    ts = generate(TraceParams(n_samples_per_trace=40, leak_point_value=20, seed=1), 50)
    assert desynchronize(ts, 0, seed=5).equals(ts)


def test_desync_shift_definition():
    ts = generate(TraceParams(n_samples_per_trace=80, leak_point_value=40, seed=1), 300)
    out = desynchronize(ts, 30, seed=2)
    for i, d in enumerate(out.metadata["shifts"]):
        assert np.array_equal(out.traces[i, d:], ts.traces[i, :80 - d])


def test_desync_shift_distribution():
    ts = generate(TraceParams(n_samples_per_trace=100, leak_point_value=60, seed=1), 1000)
    shifts = desynchronize(ts, 50, seed=11).metadata["shifts"]
    assert shifts.min() >= 0 and shifts.max() <= 50
    # discrete uniform on 0..50: mean 25, variance ((51^2)-1)/12
    se = np.sqrt((51 ** 2 - 1) / 12 / len(shifts))
    assert abs(shifts.mean() - 25) < 3 * se


def test_balanced_sample_one_per_class():
    ts = generate(TraceParams(n_samples_per_trace=10, leak_point_value=5, seed=0), 6000)
    out = sample_balanced(ts, 1, seed=0)
    assert len(out) == 256 and sorted(out.labels.tolist()) == list(range(256))


def test_balanced_sample_scale():
    ts = generate(TraceParams(n_samples_per_trace=2, leak_point_value=1, seed=0), 256 * 200)
    out = sample_balanced(ts, 139, seed=1)
    assert len(out) == 35584
    assert np.all(np.bincount(out.labels, minlength=256) == 139)


def test_balanced_sample_insufficient():
    ts = generate(TraceParams(n_samples_per_trace=4, leak_point_value=1, seed=0), 300)
    with pytest.raises(InsufficientClassError) as ei:
        sample_balanced(ts, 5, seed=0)
    assert ei.value.needed == 5 and ei.value.available < 5


def test_normalize_endpoints_and_constant():
    x = np.array([[-3.0, 2.0], [5.0, 2.0], [1.0, 2.0]])
    ts = TraceSet(x, np.zeros(3), np.zeros(3), np.zeros(3))
    out = normalize(ts)
    assert out.traces[:, 0].tolist() == [-1.0, 1.0, 0.0]
    assert out.traces[:, 1].tolist() == [0.0, 0.0, 0.0]
    assert out.normalized


def test_normalize_reference_on_held_out():
    p = TraceParams(n_samples_per_trace=60, leak_point_value=30, seed=0)
    train = normalize(generate(p, 4000))
    held = generate(TraceParams(n_samples_per_trace=60, leak_point_value=30, seed=1), 500)
    out = normalize(held, train.metadata["normalization"])
    lo, hi = train.metadata["normalization"]
    inside = (held.traces >= lo) & (held.traces <= hi)
    assert np.all(np.abs(out.traces[inside]) <= 1.0 + 1e-6)


@given(st.integers(1, 40), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_normalized_values_in_range(n, m, seed):
    x = np.random.default_rng(seed).normal(0, 10, (n, m))
    out = normalize(TraceSet(x, np.zeros(n), np.zeros(n), np.zeros(n)))
    assert np.all(out.traces >= -1) and np.all(out.traces <= 1)


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_masking_xor_property(p, k, r):
    assert intermediate(p, k, r) ^ r == intermediate(p, k, masking=False)
