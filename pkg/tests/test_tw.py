import math

import numpy as np
import pytest

from oracles import airy_scipy, tw1_fredholm
from sparsejl import tw
from sparsejl.airy import airy_ai, airy_tail_integrals
from sparsejl.randgen import DomainError, SeedSpec

# Reference moments of TW1, frozen from a Fredholm-determinant oracle run
# (Gauss-Legendre, 80 nodes, CDF on a 0.01 grid over [-10, 10]).
TW1_MEAN = -1.2065335745820
TW1_VAR = 1.6077810345810


@pytest.fixture(scope="module")
def table():
    return tw.default_table()


# --- Airy --------------------------------------------------------------------------


@pytest.mark.parametrize("x", [-9.5, -4.0, -1.0, 0.0, 0.3, 2.0, 5.0, 8.9, 9.0, 12.0, 20.0])
def test_airy_against_scipy(x):
    ai, aip = airy_ai(x)
    ref, refp = airy_scipy(x)
    assert ai == pytest.approx(ref, rel=1e-12, abs=1e-300)
    assert aip == pytest.approx(refp, rel=1e-12, abs=1e-300)


def test_airy_ode_residual():
    h = 1e-4
    for x in np.linspace(-2, 8, 41):
        app = (airy_ai(x + h)[1] - airy_ai(x - h)[1]) / (2 * h)
        assert abs(app - x * airy_ai(x)[0]) <= 1e-8


def test_airy_tail_integrals():
    import mpmath

    for x in (0.0, 3.0, 12.0):
        i1, j, i2 = airy_tail_integrals(x)
        assert i1 == pytest.approx(float(mpmath.quad(mpmath.airyai, [x, mpmath.inf])), rel=1e-12)
        assert j == pytest.approx(float(mpmath.quad(lambda t: mpmath.airyai(t) ** 2, [x, mpmath.inf])), rel=1e-12)
        assert i2 == pytest.approx(
            float(mpmath.quad(lambda t: (t - x) * mpmath.airyai(t) ** 2, [x, mpmath.inf])), rel=1e-12
        )


# --- Hastings-McLeod ---------------------------------------------------------------


def test_painleve_residual():
    t = np.linspace(-8, 6, 281)
    h = 1e-3
    q, qp = tw.hastings_mcleod(np.concatenate([t, t + h, t - h]))
    m = t.size
    qpp = (qp[m:2 * m] - qp[2 * m:]) / (2 * h)
    res = qpp - t * q[:m] - 2 * q[:m] ** 3
    assert np.max(np.abs(res)) <= 1e-6


def test_hastings_mcleod_asymptotics():
    q, _ = tw.hastings_mcleod(np.array([-9.0, 4.0]))
    assert q[1] / airy_ai(4.0)[0] == pytest.approx(1.0, abs=1e-4)
    assert q[0] / math.sqrt(4.5) == pytest.approx(1.0, abs=0.02)
    qq, _ = tw.hastings_mcleod(np.linspace(-8, 6, 50))
    assert np.all(qq > 0)


def test_hastings_mcleod_rejects_grid_past_boundary():
    with pytest.raises(DomainError):
        tw.hastings_mcleod(np.array([0.0, 13.0]))


def test_blowup_detected():
    # at a loose tolerance the growing mode swamps the bounded solution
    with pytest.raises(tw.TableBuildError):
        tw._solve(-10.0, 12.0, 1e-6, 0.5)


# --- table ---------------------------------------------------------------------------


def test_table_shape(table):
    assert table.grid[0] == -10 and table.grid[-1] == 12
    assert np.all(np.diff(table.F1) >= 0)
    assert table.cdf(-10.0) < 1e-10
    assert 1 - table.cdf(12.0) < 1e-10
    assert table.cdf(-50.0) == 0.0 and table.cdf(50.0) == 1.0
    xs = np.linspace(-12, 14, 2001)
    assert np.all(np.diff(table.cdf(xs)) >= 0)


def test_upper_tail_mass_at_six():
    # F1(6) is not within 1e-10 of 1; the independent oracle agrees
    assert 1 - tw1_fredholm(6.0) == pytest.approx(1 - tw.tw1_cdf(6.0), rel=1e-6)
    assert 1e-6 < 1 - tw.tw1_cdf(6.0) < 1e-5


@pytest.mark.parametrize("x", [-7.0, -4.0, -2.5, 0.0, 1.0, 3.0, 5.0, 8.0])
def test_cdf_against_fredholm_on_grid(x):
    assert tw.tw1_cdf(x) == pytest.approx(tw1_fredholm(x), abs=1e-11)


@pytest.mark.parametrize("x", [-3.14159, -1.2065, 0.0055, 2.71828])
def test_cdf_against_fredholm_between_nodes(x):
    # cubic interpolation error at spacing 0.01
    assert tw.tw1_cdf(x) == pytest.approx(tw1_fredholm(x), abs=1e-8)


def test_moments(table):
    mean, var = table.moments()
    assert abs(mean - TW1_MEAN) <= 1e-3
    assert abs(var - TW1_VAR) <= 2e-3
    # the ODE route actually agrees far more closely
    assert abs(mean - TW1_MEAN) <= 1e-9
    assert abs(var - TW1_VAR) <= 1e-9


def test_step_halving(table):
    fine = tw.build_table(nodes=2 * (tw.GRID_NODES - 1) + 1)
    x = np.linspace(-8, 4, 1201)
    assert np.max(np.abs(fine.cdf(x) - table.cdf(x))) <= 1e-6


def test_pdf(table):
    x = np.linspace(-8, 6, 2801)
    p = table.pdf(x)
    assert np.all(p >= 0)
    assert np.trapezoid(p, x) == pytest.approx(table.cdf(6.0) - table.cdf(-8.0), abs=1e-5)
    h = 1e-5
    assert table.pdf(-1.0) == pytest.approx((table.cdf(-1 + h) - table.cdf(-1 - h)) / (2 * h), rel=1e-4)


@pytest.mark.parametrize("p", [0.01, 0.5, 0.99])
def test_quantile_roundtrip(p):
    assert tw.tw1_cdf(tw.tw1_quantile(p)) == pytest.approx(p, abs=1e-4)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_quantile_domain(p):
    with pytest.raises(DomainError):
        tw.tw1_quantile(p)


def test_sampling(table):
    a = tw.tw1_sample(SeedSpec(1), 100_000)
    b = tw.tw1_sample(SeedSpec(1), 100_000)
    assert np.array_equal(a, b)
    mean, var = table.moments()
    assert abs(a.mean() - mean) <= 0.02
    assert abs(a.var() - var) <= 0.05


def test_csv_roundtrip(table):
    t2 = tw.Tw1Table.from_csv(table.to_csv())
    assert np.array_equal(t2.grid, table.grid)
    assert np.array_equal(t2.F1, table.F1)
    assert t2.meta == table.meta
    with pytest.raises(ValueError):
        tw.Tw1Table.from_csv("a,b\n1,2\n")
