import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import kolmogorov_quantile, rescale_largest_mp, rescale_smallest_mp
from sparsejl import constants as C
from sparsejl import sketch as sk
from sparsejl import spectra, tw
from sparsejl.randgen import DomainError, SeedSpec

HL, EH, GQ, GA = sk.Ensemble.HASHING_LIKE, sk.Ensemble.EXACT_HASHING, sk.Ensemble.GENERAL_Q, sk.Ensemble.GAUSSIAN


def test_single_column_of_ones():
    N = 49
    p = sk.EnsembleParams(GQ, 1, N, q=2.0)
    h = sk.SparseSketch(p, SeedSpec(0), 1 / math.sqrt(N), np.arange(N + 1), np.zeros(N, dtype=np.int32),
                        np.ones(N, dtype=np.int8))
    pair = spectra.extreme_singular_values(h)
    assert pair.s1 == pytest.approx(1.0, rel=1e-15) and pair.sn == pytest.approx(1.0, rel=1e-15)


def test_small_hashing_like_vs_svd():
    h = sk.build(sk.EnsembleParams(HL, 3, 5, s=2), SeedSpec(12))
    d = np.linalg.svd(h.to_dense().T, compute_uv=False)
    pair = spectra.extreme_singular_values(h)
    assert pair.s1 == pytest.approx(d[0], rel=1e-10)
    assert pair.sn == pytest.approx(d[-1], rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("ens,kw", [(HL, {"s": 3.0}), (EH, {"s": 3}), (GQ, {"q": 4.0}), (GA, {})])
def test_against_dense_svd_many_seeds(ens, kw):
    for seed in range(100):
        n = 4 + seed % 29
        N = 2 * n + seed
        h = sk.build(sk.EnsembleParams(ens, n, N, **kw), SeedSpec(seed))
        d = np.linalg.svd(h.to_dense(), compute_uv=False)
        pair = spectra.extreme_singular_values(h)
        assert pair.s1 == pytest.approx(d[0], rel=1e-10)
        assert pair.sn == pytest.approx(d[-1], rel=1e-10)
        assert pair.s1 <= np.linalg.norm(d)  # Frobenius bound


def test_row_permutation_invariance():
    h = sk.build(sk.EnsembleParams(HL, 20, 300, s=5), SeedSpec(3))
    a = spectra.extreme_singular_values(h)
    A = h.to_dense().T
    d = np.linalg.svd(A[np.random.default_rng(0).permutation(300)], compute_uv=False)
    assert d[0] == pytest.approx(a.s1, rel=1e-12)
    assert d[-1] == pytest.approx(a.sn, rel=1e-12)


def test_lanczos_path_agrees(monkeypatch):
    h = sk.build(sk.EnsembleParams(GQ, 80, 400, q=3.0), SeedSpec(4))
    dense = spectra.extreme_singular_values(h, svd_check=False)
    monkeypatch.setattr(spectra, "DENSE_EIG_MAX", 10)
    it = spectra.extreme_singular_values(h, svd_check=False)
    assert it.s1 == pytest.approx(dense.s1, rel=1e-10)
    assert it.sn == pytest.approx(dense.sn, rel=1e-8)


def test_pair_ordering_enforced():
    with pytest.raises(spectra.NumericalError):
        spectra.SingularPair(1.0, 2.0, 10, 2)


# --- schedules and experiments --------------------------------------------------------


def test_log_schedule():
    sched = spectra.log_schedule()
    assert len(sched) == 100
    assert sched[0] == (500, 5, 1) and sched[-1] == (100_000, 1000, 200)
    Ns = [p[0] for p in sched]
    assert Ns == sorted(Ns)
    assert all(n == int(np.floor(N / 100 + 0.5)) for N, n, _ in sched)
    sub = spectra.subsample(sched, 20)
    assert len(sub) == 20 and sub[0] == sched[0] and sub[-1] == sched[-1]


def test_matlab_round_half_up():
    assert spectra.matlab_round([0.5, 1.5, 2.5, 2.4999]).tolist() == [1, 2, 3, 2]


def test_baiyin_single_point_is_plain_trials():
    rep = spectra.baiyin_experiment([(400, 8, 2)], trials_per_point=3, master_seed=1)
    assert len(rep.rows) == 3
    p = sk.EnsembleParams(HL, 8, 400, s=2)
    direct = spectra.extreme_singular_values(sk.build(p, SeedSpec(1, 0)))
    assert rep.rows[0][4] == direct.s1 and rep.rows[0][5] == direct.sn
    assert rep.references == {"aspect": 0.01, "s1_limit": 11.0, "sn_limit": 9.0}
    assert rep.rows_csv().splitlines()[0] == "N,n,s,trial,s1,sn"


def test_baiyin_general_q_variant():
    rep = spectra.baiyin_experiment([(2000, 20, 0), (4000, 40, 0)], 2, master_seed=2, q=6.0)
    assert [p.s for p in rep.points] == pytest.approx([20 / 3, 40 / 3])
    with pytest.raises(DomainError):
        spectra.baiyin_experiment([], 2)


def test_sparsity_sweep_trend_and_flags():
    rep = spectra.sparsity_sweep(10_000, 100, [0.5, 2, 10, 100], trials=4, master_seed=3)
    sn = [p.sn_mean for p in rep.points]
    s1 = [p.s1_mean for p in rep.points]
    assert sn == sorted(sn)
    assert s1 == sorted(s1, reverse=True)
    assert rep.points[0].flags and not rep.points[-1].flags
    assert spectra.zero_column_probability(1000, 50) == pytest.approx(0.95**1000)


def test_smallest_singular_value_probe():
    # frequency of sn >= kappa1 never decreases along a growing schedule
    led = C.ledger_for(10.0)
    freqs = []
    for N in (200, 800, 3200):
        n = N // 100
        rep = spectra.baiyin_experiment([(N, n, 0)], 20, master_seed=4, q=10.0)
        freqs.append(np.mean([r[5] >= led.kappa1 for r in rep.rows]))
    assert freqs == sorted(freqs) and freqs[-1] == 1.0


# --- rescaling -------------------------------------------------------------------


def test_rescale_centering_and_sign():
    N, n = 10_000, 100
    c = 1 + math.sqrt(N / n)
    assert spectra.rescale_largest(spectra.SingularPair(c, 1.0, N, n)).value == pytest.approx(0.0, abs=1e-9)
    lo = spectra.rescale_smallest(spectra.SingularPair(20.0, 8.9, N, n)).value
    hi = spectra.rescale_smallest(spectra.SingularPair(20.0, 9.1, N, n)).value
    assert hi < lo


@given(st.floats(0.5, 30), st.integers(2, 500), st.integers(1, 60))
@settings(max_examples=60, deadline=None)
def test_rescale_matches_high_precision(s, n, ratio):
    N = n * (ratio + 1)
    pair = spectra.SingularPair(s + 1.0, s, N, n)
    assert spectra.rescale_largest(pair).value == pytest.approx(float(rescale_largest_mp(s + 1.0, N, n)), rel=1e-10, abs=1e-9)
    assert spectra.rescale_smallest(pair).value == pytest.approx(float(rescale_smallest_mp(s, N, n)), rel=1e-10, abs=1e-9)


def test_rescale_reference_point():
    pair = spectra.SingularPair(11.3, 8.7, 10_000, 100)
    assert spectra.rescale_largest(pair).value == pytest.approx(float(rescale_largest_mp(11.3, 10_000, 100)), rel=1e-10)
    assert spectra.rescale_smallest(pair).value == pytest.approx(float(rescale_smallest_mp(8.7, 10_000, 100)), rel=1e-10)


def test_rescale_square_rejected():
    with pytest.raises(DomainError):
        spectra.rescale_largest(spectra.SingularPair(2.0, 0.1, 50, 50))


# --- empirical CDF and KS -----------------------------------------------------------


def test_empirical_cdf():
    c = spectra.EmpiricalCdf([3.0, 1.0, 2.0, 2.0])
    assert c(0.5) == 0.0 and c(1.0) == 0.25 and c(2.0) == 0.75 and c(10) == 1.0
    one = spectra.EmpiricalCdf([0.7])
    assert one(0.6999) == 0.0 and one(0.7) == 1.0
    with pytest.raises(DomainError):
        spectra.EmpiricalCdf([])


def test_ks_exact_quantiles():
    from scipy.stats import norm

    m = 500
    x = norm.ppf((np.arange(1, m + 1) - 0.5) / m)
    assert spectra.ks_distance(spectra.EmpiricalCdf(x), norm.cdf) <= 1 / (2 * m) + 1e-12


def test_ks_shift():
    from scipy.stats import norm

    x = np.random.default_rng(0).standard_normal(4000)
    d = spectra.ks_distance(spectra.EmpiricalCdf(x + 1.0), norm.cdf)
    assert d >= norm.cdf(0.5) - norm.cdf(-0.5) - 2 * kolmogorov_quantile(4000)


def test_ks_against_scipy():
    from scipy.stats import kstest, norm

    x = np.random.default_rng(1).standard_normal(777)
    assert spectra.ks_distance(spectra.EmpiricalCdf(x), norm.cdf) == pytest.approx(kstest(x, "norm").statistic, abs=1e-15)


@pytest.mark.parametrize("m", [400, 4000, 40000])
def test_ks_tw_samples(m):
    x = tw.tw1_sample(SeedSpec(m), m)
    d = spectra.ks_distance(spectra.EmpiricalCdf(x), tw.tw1_cdf)
    # 99.9% Kolmogorov level plus the table interpolation budget
    assert d <= kolmogorov_quantile(m, 0.999) + 1e-4


def test_tw_experiment_small():
    rep = spectra.tw_experiment([500, 1000], samples_per_N=100, master_seed=5)
    assert len(rep.results) == 4
    r = rep.get(1000, "largest")
    assert r.n == 10 and r.s == 2 and r.samples == 100 and 0 <= r.ks <= 1
    lines = rep.cdf_csv().splitlines()
    assert lines[0] == "N,kind,rank,value" and len(lines) == 401
    s = rep.summary()
    assert s["tw1_mean"] == pytest.approx(-1.2065335745820, abs=1e-9)
    with pytest.raises(DomainError):
        spectra.tw_experiment([500], samples_per_N=50)


def test_threads_do_not_change_experiments():
    a = spectra.baiyin_experiment([(300, 3, 1), (600, 6, 1)], 4, master_seed=6, threads=1)
    b = spectra.baiyin_experiment([(300, 3, 1), (600, 6, 1)], 4, master_seed=6, threads=3)
    assert a.rows_csv() == b.rows_csv()
