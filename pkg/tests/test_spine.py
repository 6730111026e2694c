import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelsim.errors import ConfigError
from skelsim.motion import exact_ou_sample
from skelsim.spine import (SpineTrace, campbell_oracle, lp_bound_estimate, occupation_distance, run_spine,
                           run_spines, spine_conditional_mass, truncation_curvature, truncation_slope)

from conftest import zscore

MU = [(0.0, 1.0)]


@pytest.fixture(scope="module")
def quad_traces(quad):
    return run_spines(quad, MU, 10.0, 2000, 17, dt=0.1, p=2.0)


def test_continuous_clock_is_rate_two(quad_traces):
    counts = [tr.Dn.size for tr in quad_traces]
    assert abs(zscore(counts, 20.0)) <= 3


def test_no_jumps_without_levy_kernel(quad_traces):
    assert all(tr.Dm.size == 0 for tr in quad_traces)


def test_clock_invariants(tempered):
    rng = np.random.default_rng(2)
    for _ in range(50):
        tr = run_spine(tempered, MU, 5.0, 0.1, rng, p=1.5)
        assert np.all(np.diff(tr.Dn) > 0) and np.all(np.diff(tr.Dm) > 0)
        assert np.all(tr.Dm_mass > 0)
        assert np.all(np.isfinite(tr.path))  # conservative spine


def test_trace_validation():
    empty = np.zeros(0)
    with pytest.raises(ValueError):
        SpineTrace(np.array([0.0, 1.0]), np.zeros((2, 1)), np.array([0.5, 0.4]), np.zeros((2, 1)), empty,
                   empty, np.zeros((0, 1)))
    with pytest.raises(ValueError):
        SpineTrace(np.array([0.0, 1.0]), np.zeros((2, 1)), empty, np.zeros((0, 1)), np.array([0.3]),
                   np.array([0.0]), np.zeros((1, 1)))


def test_empty_clocks_give_phi_mu(quad):
    empty = np.zeros(0)
    tr = SpineTrace(np.array([0.0, 1.0]), np.zeros((2, 1)), empty, np.zeros((0, 1)), empty, empty,
                    np.zeros((0, 1)), phi_mu=1.7)
    assert spine_conditional_mass(tr, quad) == 1.7


def test_campbell_identity(quad, quad_traces):
    vals = [spine_conditional_mass(tr, quad) - tr.phi_mu for tr in quad_traces]
    oracle = campbell_oracle(quad, MU, 10.0)
    assert oracle == pytest.approx(2 * (1 - np.exp(-10.0)), rel=1e-6)
    assert abs(zscore(vals, oracle)) <= 3


def test_campbell_identity_spatial(request):
    from skelsim.catalog import get_card

    card = get_card("unbounded-beta")  # alpha phi is constant but phi is not
    mu = [(0.5, 1.0)]
    traces = run_spines(card, mu, 3.0, 1500, 5, dt=0.05)
    vals = [spine_conditional_mass(tr, card) - tr.phi_mu for tr in traces]
    assert abs(zscore(vals, campbell_oracle(card, mu, 3.0))) <= 3


def test_l2_curve_bounded_by_campbell(quad, quad_traces):
    sup, curve = lp_bound_estimate(quad_traces, quad, 2.0)
    assert sup <= 1.0 + 2.0 * 1.0 / quad.lam + 3 * curve.se.max()
    assert abs(curve.slope_z) <= 3


def test_p_one_curve_is_constant(quad, quad_traces):
    sup, curve = lp_bound_estimate(quad_traces[:50], quad, 1.0)
    assert np.all(curve.mean == 1.0) and sup == 1.0


def test_p_out_of_range(quad, quad_traces):
    with pytest.raises(ConfigError):
        lp_bound_estimate(quad_traces[:5], quad, 2.5)


def test_truncation_flat_without_jumps(quad, quad_traces):
    rep = truncation_slope(quad_traces[:200], quad, 2.0)
    assert abs(rep.estimate) < 1e-12
    rep = truncation_curvature(quad_traces[:200], quad, 2.0)
    assert abs(rep.estimate) < 1e-12
    with pytest.raises(ConfigError):
        truncation_curvature(quad_traces[:5], quad, 2.0, Ks=(1, 10, 1000))


def test_occupation_distance_on_exact_samples(quad):
    s = exact_ou_sample(1.0, True, np.zeros(200000), 30.0, np.random.default_rng(0))
    assert occupation_distance(s, quad.density, -3, 3, 20) < 0.01
    far = np.zeros(1000) + 2.5
    assert occupation_distance(far, quad.density, -3, 3, 20) > 1.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), T=st.floats(0.5, 4.0))
def test_statistic_nondecreasing_in_time(seed, T):
    from skelsim.catalog import get_card

    card = get_card("inward-ou-tempered")
    tr = run_spine(card, MU, T, 0.1, np.random.default_rng(seed), p=1.5)
    vals = [spine_conditional_mass(tr, card, t) for t in np.linspace(0, T, 9)]
    assert np.all(np.diff(vals) >= -1e-12)
    assert vals[0] == pytest.approx(tr.phi_mu)
