import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from skelsim import diagnostics as dg
from skelsim.catalog import get_card
from skelsim.functions import Indicator, const, gaussian
from skelsim.motion import exact_ou_sample
from skelsim.reports import RunReport, weighted_slope
from skelsim.skeleton import simulate_skeleton

MU = [(0.0, 1.0)]


def test_report_verdicts():
    assert RunReport("a", estimate=1.0, se=0.1, oracle=1.2).passed
    assert not RunReport("b", estimate=1.0, se=0.1, oracle=1.4).passed
    assert RunReport("c", metric=0.01, threshold=0.03).passed
    assert not RunReport("d", estimate=1.0, se=0.1, oracle=1.0, metric=0.5, threshold=0.1).passed
    assert not RunReport("e").passed  # nothing to judge
    r = RunReport("f", estimate=2.0, se=0.5, oracle=1.0)
    assert r.z == pytest.approx(2.0) and r.line().startswith("PASS f:")
    assert set(r.row()) >= {"check", "estimate", "se", "oracle", "z", "verdict"}


def test_mean_report_has_positive_se():
    assert dg.mean_report("m", np.array([1.0, 2.0, 4.0]), 2.0).se > 0


def test_z_machinery_calibrated():
    # under a true null the 3-sigma rule should reject in well under 1% of trials
    rng = np.random.default_rng(2718)
    ok = 0
    for _ in range(100):
        s = exact_ou_sample(1.0, True, np.full(2000, 1.0), 0.5, rng)
        ok += dg.mean_report("ou mean", s, np.exp(-0.5)).passed
    assert ok >= 99


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-5, 5), n=st.integers(3, 10))
def test_constant_series_is_flat(c, n):
    W = np.full((20, n), c)
    rep = dg.martingale_flatness(np.arange(n, dtype=float), W)
    assert rep.estimate == 0.0 and rep.passed


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_weighted_slope_exact_on_lines(a, b):
    t = np.linspace(0, 5, 6)
    s, se = weighted_slope(t, a + b * t, np.full(6, 0.1))
    assert s == pytest.approx(b, abs=1e-9)


def test_many_to_one_oracles(quad):
    assert dg.many_to_one_oracle(quad, const(1.0), MU, 1.3) == pytest.approx(1.0)
    v = (1 - np.exp(-2.0)) / 2
    assert dg.many_to_one_oracle(quad, Indicator(-1, 1), MU, 1.0) == pytest.approx(erf(1 / np.sqrt(2 * v)), rel=1e-10)
    assert dg.many_to_one_oracle(quad, Indicator(-1, 1), [(0.5, 2.0)], 0.0) == 2.0


def test_feller_and_nested_quadrature_agree(quad):
    assert dg.feller_variance(quad.mech, 1.0, 0.0) == 0.0
    closed = dg.feller_variance(quad.mech, 1.0, 1.0)
    assert closed == pytest.approx(2 * np.e * (np.e - 1))
    assert dg.variance_oracle(quad, const(1.0), 0.0, 1.0) == pytest.approx(closed, rel=1e-6)


def test_check_variance_constant(quad):
    rep = dg.check_variance(quad, const(1.0, "one"), MU, 1.0, 4000, 3)
    assert rep.passed, rep.line()


def test_check_variance_bump(quad):
    rep = dg.check_variance(quad, gaussian(0.5, -1.0, "bump"), MU, 1.0, 4000, 4)
    assert rep.passed, rep.line()


def test_check_many_to_one(quad):
    for rep in dg.check_many_to_one(quad, Indicator(-1, 1, "ind"), MU, 1.0, 3000, 5):
        assert rep.passed, rep.line()


def test_laplace_zero_function(quad):
    rep = dg.check_laplace(quad, const(0.0, "zero"), MU, 1.0, 10, 0)
    assert rep.estimate == 1.0 and rep.oracle == 1.0 and rep.passed


def test_laplace_constant_against_ode(quad):
    from skelsim.mildsolver import solve_csbp_ode

    rep = dg.check_laplace(quad, const(0.5, "half"), MU, 1.0, 3000, 6)
    ts, us = solve_csbp_ode(quad.mech, 0.5, 1.0)
    assert rep.oracle == pytest.approx(np.exp(-us[-1]), rel=1e-6)
    assert rep.passed, rep.line()


def test_martingale_flatness_self_test(quad):
    times = np.array([0.0, 1.0, 2.0, 4.0, 6.0, 8.0])
    W = simulate_skeleton(quad, MU, times, 1500, 44).col("W_Z")
    assert dg.martingale_flatness(times, W, "W_Z").passed
    # a 10% error in lambda makes the series decay
    wrong = W * np.exp(-0.1 * times)[None, :]
    rep = dg.martingale_flatness(times, wrong, "wrong lambda")
    assert rep.z < -3


def test_slln_with_phi_is_identity(quad):
    reps, table = dg.slln_curve(quad, const(1.0, "phi"), MU, [1.0, 2.0], 200, 9)
    for row in table:
        assert row["mean_gap"] == pytest.approx(0.0, abs=1e-9)
        assert row["corr"] == pytest.approx(1.0)
    assert all(r.passed for r in reps)


def test_extinction_of_zero_measure(quad):
    rep, = dg.extinction_frequency(quad, [(0.0, 0.0)], 5.0, 10, 0)
    assert rep.estimate == 1.0 and rep.passed


def test_martingale_function_identity(quad):
    reps = dg.extinction_frequency(quad, MU, 3.0, 3000, 8)
    assert reps[1].passed, reps[1].line()


def test_ergodic_far_from_stationarity(quad):
    rep = dg.ergodic_occupation(quad, T=0.1, replicas=300, seed=1)
    assert not rep.passed and rep.metric > 0.5


def test_coupling_report():
    a = np.linspace(0, 2, 50)
    reps = dg.coupling_report(a, a + 0.01)
    assert all(r.passed for r in reps)
    reps = dg.coupling_report(a, a[::-1])
    assert not reps[0].passed


def test_standard_functions(quad):
    fs = dg.standard_functions(quad)
    assert [f.name for f in fs] == ["indicator", "bump", "phi"]
    x = np.array([[0.0], [2.0]])
    assert np.allclose(fs[1](x), 0.5 * np.exp(-x[:, 0] ** 2))
    assert np.allclose(fs[2](x), 1.0)
    assert get_card("outward-ou-quadratic").eigen.phi(x).shape == (2,)
