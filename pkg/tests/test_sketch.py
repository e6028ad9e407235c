import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dense_pattern
from sparsejl import sketch as sk
from sparsejl.randgen import DomainError, SeedSpec, sample_mu_y

HL, EH, GQ, GA = sk.Ensemble.HASHING_LIKE, sk.Ensemble.EXACT_HASHING, sk.Ensemble.GENERAL_Q, sk.Ensemble.GAUSSIAN


def make(ens, n, N, s=None, q=None, seed=0):
    return sk.build(sk.EnsembleParams(ens, n, N, s=s, q=q), SeedSpec(seed))


# --- parameters ----------------------------------------------------------------


def test_params_validation():
    with pytest.raises(DomainError):
        sk.EnsembleParams(HL, 10, 100, s=0)
    with pytest.raises(DomainError):
        sk.EnsembleParams(HL, 10, 100, s=11)
    with pytest.raises(DomainError):
        sk.EnsembleParams(EH, 10, 100, s=2.5)
    with pytest.raises(DomainError):
        sk.EnsembleParams(HL, 10, 100, s=2, q=3)
    with pytest.raises(DomainError):
        sk.EnsembleParams(GQ, 10, 100, q=1.5)
    with pytest.raises(DomainError):
        sk.EnsembleParams(GA, 10, 100, s=2)
    with pytest.raises(DomainError):
        sk.EnsembleParams(GA, 101, 100)
    p = sk.EnsembleParams(HL, 10, 100, s=2.5)
    assert p.q == 8.0 and p.q_hat == 2.0
    assert sk.EnsembleParams(GQ, 30, 100, q=6).expected_column_nnz == 10.0


# --- hashing-like ----------------------------------------------------------------


def test_hashing_like_column_law():
    h = make(HL, 100, 10_000, s=20, seed=1)
    c = h.column_nnz()
    # mean within 4 sigma of s, variance s(1 - s/n) = 16 within 10%
    assert abs(c.mean() - 20) <= 4 * math.sqrt(16 / c.size)
    assert abs(c.var(ddof=1) - 16) <= 1.6
    assert h.scale == 1 / math.sqrt(20)


def test_hashing_like_total_nnz_band():
    n, N, s = 50, 4000, 3.5
    h = make(HL, n, N, s=s, seed=2)
    p = s / n
    assert abs(h.nnz - N * s) <= 4 * math.sqrt(n * N * p * (1 - p))


def test_s_equals_n_is_dense_signs():
    h = make(HL, 100, 500, s=100, seed=3)
    assert np.all(h.column_nnz() == 100)
    assert np.allclose(np.abs(h.to_dense()), 0.1)


def test_pattern_is_column_major_mu_y():
    n, N, s = 7, 13, 2.0
    h = make(HL, n, N, s=s, seed=4)
    y = sample_mu_y(SeedSpec(4), 2 * n / s, n * N).reshape(N, n).T
    assert np.array_equal(dense_pattern(h), y)


def test_small_pattern_reproducible():
    a = make(HL, 4, 4, s=1, seed=99)
    b = make(HL, 4, 4, s=1, seed=99)
    assert a == b
    assert np.array_equal(a.to_dense(), b.to_dense())
    assert a != make(HL, 4, 4, s=1, seed=100)


def test_general_q_matches_hashing_like():
    n, N, s = 40, 300, 5.0
    a = make(HL, n, N, s=s, seed=5)
    b = make(GQ, n, N, q=2 * n / s, seed=5)
    assert np.array_equal(a.indptr, b.indptr)
    assert np.array_equal(a.indices, b.indices)
    assert np.array_equal(a.signs, b.signs)
    assert a.scale == pytest.approx(b.scale, rel=1e-15)


def test_general_q_cases():
    q2 = make(GQ, 30, 200, q=2.0, seed=6)
    assert np.all(q2.column_nnz() == 30)
    assert np.allclose(np.abs(q2.to_dense()), 1 / math.sqrt(30))
    q6 = make(GQ, 30, 20_000, q=6.0, seed=6)
    assert abs(q6.column_nnz().mean() - 10) <= 4 * math.sqrt(30 * (1 / 3) * (2 / 3) / 20_000)


# --- exact hashing ---------------------------------------------------------------


def test_exact_hashing_exact_counts():
    h = make(EH, 10, 100_000, s=3, seed=7)
    assert np.all(h.column_nnz() == 3)
    # rows within a column are distinct
    rows = h.indices.reshape(-1, 3)
    assert np.all(np.diff(np.sort(rows, axis=1), axis=1) > 0)
    freq = np.bincount(h.indices, minlength=10) / 100_000
    assert np.all(np.abs(freq - 0.3) <= 0.005)
    assert set(np.unique(h.signs).tolist()) == {-1, 1}


def test_exact_hashing_subsets_uniform():
    # all C(5,2) = 10 subsets equally likely
    h = make(EH, 5, 50_000, s=2, seed=8)
    rows = np.sort(h.indices.reshape(-1, 2), axis=1)
    codes = rows[:, 0] * 5 + rows[:, 1]
    counts = np.unique(codes, return_counts=True)[1]
    assert counts.size == 10
    expected = 5000
    assert np.all(np.abs(counts - expected) <= 5 * math.sqrt(expected * 0.9))


def test_exact_hashing_full():
    h = make(EH, 6, 40, s=6, seed=9)
    assert np.allclose(np.abs(h.to_dense()), 1 / math.sqrt(6))


# --- gaussian --------------------------------------------------------------------


def test_gaussian_variance_and_rows():
    n, N = 20, 50_000
    h = make(GA, n, N, seed=10)
    d = h.to_dense()
    assert abs(d.var() - 1 / n) <= 0.05 / n
    rn = np.linalg.norm(d, axis=1)
    assert np.all(np.abs(rn - math.sqrt(N / n)) <= 0.05 * math.sqrt(N / n))
    assert h == make(GA, n, N, seed=10)


# --- apply and gram --------------------------------------------------------------


def test_apply_hand_case():
    params = sk.EnsembleParams(GQ, 2, 2, q=2.0)
    h = sk.SparseSketch(params, SeedSpec(0), 0.5, np.array([0, 2, 4]), np.array([0, 1, 0, 1]),
                        np.array([1, -1, 1, 1], dtype=np.int8))
    assert np.array_equal(sk.apply(h, [1.0, 1.0]), np.array([1.0, 0.0]))
    assert np.array_equal(sk.apply(h, [0.0, 0.0]), np.zeros(2))
    with pytest.raises(DomainError):
        sk.apply(h, [1.0, 2.0, 3.0])


@pytest.mark.parametrize("ens,kw", [(HL, {"s": 3}), (EH, {"s": 3}), (GQ, {"q": 5.0}), (GA, {})])
def test_apply_matches_dense(ens, kw):
    rng = np.random.default_rng(0)
    for seed in range(5):
        h = make(ens, 30, 50, seed=seed, **kw)
        x = rng.standard_normal(50)
        ref = h.to_dense() @ x
        assert np.allclose(sk.apply(h, x), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())
        for j in (0, 17, 49):
            e = np.zeros(50)
            e[j] = 1
            assert np.array_equal(sk.apply(h, e), h.to_dense()[:, j])


def test_gram_hand_matrix():
    params = sk.EnsembleParams(GQ, 3, 3, q=2.0)
    signs = np.array([[1, -1, 1], [1, 1, -1], [-1, 1, 1]], dtype=np.int8)  # columns
    h = sk.SparseSketch(params, SeedSpec(0), 2.0, np.array([0, 3, 6, 9]), np.tile(np.arange(3), 3),
                        signs.ravel())
    H = 2.0 * signs.T.astype(float)
    assert np.array_equal(sk.gram(h), H @ H.T)


@pytest.mark.parametrize("ens,kw", [(HL, {"s": 2.5}), (EH, {"s": 4}), (GQ, {"q": 2.0}), (GA, {})])
def test_gram_properties(ens, kw):
    h = make(ens, 25, 3000, seed=11, **kw)
    g = sk.gram(h)
    d = h.to_dense()
    assert np.allclose(g, d @ d.T, rtol=1e-12, atol=1e-10)
    assert np.array_equal(g, g.T)
    w = np.linalg.eigvalsh(g)
    assert w.min() >= -1e-10 * w.max()
    if not h.is_dense:
        assert np.trace(g) == pytest.approx(h.nnz * h.scale**2, rel=1e-14)


# --- serialization ---------------------------------------------------------------


@pytest.mark.parametrize("ens,kw", [(HL, {"s": 2.5}), (EH, {"s": 4}), (GQ, {"q": 3.0}), (GA, {})])
def test_roundtrip(ens, kw, tmp_path):
    h = make(ens, 12, 70, seed=12, **kw)
    assert sk.deserialize(sk.serialize(h)) == h
    sk.save(h, tmp_path / "h.sksp")
    assert sk.load(tmp_path / "h.sksp") == h


@given(st.integers(1, 8), st.integers(0, 30), st.floats(0.1, 1.0), st.integers(0, 2**64 - 1))
@settings(max_examples=40, deadline=None)
def test_roundtrip_property(n, extra, frac, seed):
    h = make(HL, n, n + extra, s=max(frac * n, 1e-3), seed=seed)
    assert sk.deserialize(sk.serialize(h)) == h


def test_header_layout():
    h = make(HL, 3, 4, s=1, seed=5)
    b = sk.serialize(h)
    assert b[:5] == b"SKSP1"
    assert len(b) == 5 + 1 + 8 + 8 + 8 + 8 + 8 + 8 + 8 + 8 + 1 + 8 * 5 + 5 * h.nnz


def test_corruption_detected():
    h = make(HL, 5, 9, s=2, seed=6)
    b = bytearray(sk.serialize(h))
    bad = bytearray(b)
    bad[0:5] = b"XXXX1"
    with pytest.raises(sk.SketchFormatError) as e:
        sk.deserialize(bytes(bad))
    assert e.value.position == 0
    with pytest.raises(sk.SketchFormatError):
        sk.deserialize(bytes(b[:-1]))
    with pytest.raises(sk.SketchFormatError):
        sk.deserialize(bytes(b) + b"\x00")
    with pytest.raises(sk.SketchFormatError):
        sk.deserialize(bytes(b[:10]))
    bad = bytearray(b)
    bad[-1] = 3  # a sign byte
    with pytest.raises(sk.SketchFormatError) as e:
        sk.deserialize(bytes(bad))
    assert e.value.position == len(b) - h.nnz


def test_immutable():
    h = make(HL, 5, 9, s=2, seed=6)
    with pytest.raises(ValueError):
        h.signs[0] = 1
    with pytest.raises(Exception):
        h.scale = 2.0
