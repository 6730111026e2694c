import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelsim.errors import DegenerateSiteError
from skelsim.functions import const
from skelsim.mechanism import (BranchingMechanism, LevyKernel, csbp_root, grey_check, psi_eval,
                               skeleton_offspring, star_transform)

X0 = np.zeros(1)


def quadratic(beta=1.0, alpha=1.0, pi=None):
    return BranchingMechanism(const(beta), const(alpha), pi or LevyKernel.zero())


def riemann(fn, lo=1e-9, hi=1e3, n=10**7):
    # midpoint rule on a log grid: the integrands are singular at 0 and spread over decades
    edges = np.geomspace(lo, hi, n + 1)
    mid = np.sqrt(edges[1:] * edges[:-1])
    return float(np.sum(fn(mid) * np.diff(edges)))


def tempered_density(a, b, c):
    return lambda y: c * y ** (-1 - a) * np.exp(-b * y)


def test_psi_quadratic_values():
    m = quadratic()
    assert psi_eval(m, X0, 0.0) == 0.0
    assert psi_eval(m, X0, 2.0) == pytest.approx(2.0, abs=1e-14)


def test_psi_tempered_matches_riemann_sum():
    pi = LevyKernel("tempered", a=0.5, b=1.0, c=1.0)
    m = BranchingMechanism(const(1.0), const(0.0), pi)
    dens = tempered_density(0.5, 1.0, 1.0)
    oracle = -1.0 + riemann(lambda y: (np.expm1(-y) + y) * dens(y))
    assert psi_eval(m, X0, 1.0) == pytest.approx(oracle, abs=1e-6)


def test_psi_rejects_negative_z():
    with pytest.raises(ValueError):
        psi_eval(quadratic(), X0, -1.0)


def test_levy_moment_quadrature_precision():
    pi = LevyKernel("tempered", a=0.5, b=1.0, c=1.0)
    got = pi.integrate(X0, lambda y: np.minimum(y, y * y), split=1.0)
    # closed form: int_0^1 y^{0.5} e^{-y} dy + int_1^inf y^{-0.5} e^{-y} dy
    from scipy.special import gamma, gammainc, gammaincc
    exact = gamma(1.5) * gammainc(1.5, 1.0) + gamma(0.5) * gammaincc(0.5, 1.0)
    assert got == pytest.approx(exact, rel=1e-8)


def test_quadratic_offspring_is_dyadic():
    for w in (0.3, 1.0, 2.5):
        law = skeleton_offspring(quadratic(1.0, 1.0), const(w), X0, K=8)
        assert law.q == pytest.approx(1.0 * w)
        assert law.pk[0] == pytest.approx(1.0)
        assert law.total == pytest.approx(1.0, abs=1e-12)


def test_offspring_unit_card():
    law = skeleton_offspring(quadratic(), const(1.0), X0)
    assert law.q == pytest.approx(1.0)
    assert law.pk[0] == pytest.approx(1.0)
    assert law.mean == pytest.approx(2.0)


def test_offspring_degenerate_site():
    with pytest.raises(DegenerateSiteError):
        skeleton_offspring(quadratic(), const(0.0), X0)


def test_tempered_offspring_identities(tempered):
    mech, w = tempered.mech, tempered.w
    wv = float(w(X0))
    law = skeleton_offspring(mech, w, X0, K=64)
    assert np.all(law.pk >= 0)
    assert law.total == pytest.approx(1.0, abs=1e-9)
    assert law.q * (law.mean - 1) == pytest.approx(mech.psi0(X0, wv) / wv, rel=1e-9)


def test_star_transform_values(tempered):
    assert float(star_transform(quadratic(), const(1.0)).beta_star(X0)) == pytest.approx(-1.0)
    assert float(star_transform(quadratic(), const(1e-12)).beta_star(X0)) == pytest.approx(1.0, abs=1e-10)
    pi = LevyKernel("tempered", a=0.5, b=1.0, c=1.0)
    m = BranchingMechanism(const(1.0), const(0.0), pi)
    dens = tempered_density(0.5, 1.0, 1.0)
    oracle = 1.0 - riemann(lambda y: -np.expm1(-y) * y * dens(y))
    assert float(star_transform(m, const(1.0)).beta_star(X0)) == pytest.approx(oracle, abs=1e-6)


def test_csbp_root():
    assert csbp_root(quadratic()) == pytest.approx(1.0, abs=1e-12)
    assert csbp_root(quadratic(beta=-1.0)) is None


def test_csbp_root_with_jumps_matches_grid_scan():
    pi = LevyKernel("tempered", a=0.5, b=1.0, c=0.5)
    m = quadratic(pi=pi)
    zs = csbp_root(m)
    # grid scan for the sign change, then refine inside the bracketing cell
    grid = np.linspace(1e-6, 3.0, 10**6)
    vals = np.array([m.psi(X0, z) for z in grid[::1000]])
    i = int(np.argmax(vals > 0))
    lo, hi = grid[(i - 1) * 1000], grid[i * 1000]
    cell = np.linspace(lo, hi, 1001)
    cv = np.array([m.psi(X0, z) for z in cell])
    j = int(np.argmax(cv > 0))
    z0, z1 = cell[j - 1], cell[j]
    root = z0 - cv[j - 1] * (z1 - z0) / (cv[j] - cv[j - 1])
    assert zs == pytest.approx(root, abs=1e-9)


def test_grey_condition():
    assert grey_check(quadratic())
    assert not grey_check(BranchingMechanism(const(1.0), const(0.0), LevyKernel.zero()))
    # alpha = 0 with a y^{-1.5} tempered tail: psi grows like z^{0.5}, so int dz/psi diverges
    assert not grey_check(BranchingMechanism(const(1.0), const(0.0), LevyKernel("tempered", a=0.5, b=1.0, c=3.0)))


@settings(max_examples=40, deadline=None)
@given(z=st.floats(0.0, 20.0), h=st.floats(1e-3, 0.5), a=st.sampled_from([0.3, 0.5, 0.8, 1.5]),
       alpha=st.floats(0.0, 2.0))
def test_psi0_nonnegative_increasing_convex(z, h, a, alpha):
    b = 1.0 if a < 1 else 0.5
    m = BranchingMechanism(const(1.0), const(alpha), LevyKernel("tempered", a=a, b=b, c=0.7))
    p0, p1, p2 = (m.psi0(X0, z + k * h) for k in range(3))
    tol = 1e-9 * (1 + abs(p2))
    assert p0 >= -tol
    assert p1 >= p0 - tol
    assert p2 - 2 * p1 + p0 >= -tol


@settings(max_examples=15, deadline=None)
@given(a=st.floats(0.2, 0.9), b=st.floats(0.3, 3.0), c=st.floats(0.1, 2.0), alpha=st.floats(0.0, 1.5),
       w=st.floats(0.2, 3.0))
def test_offspring_law_sums_to_one_and_generator(a, b, c, alpha, w):
    pi = LevyKernel("tempered", a=a, b=b, c=c)
    m = BranchingMechanism(const(1.0), const(alpha), pi)
    law = skeleton_offspring(m, const(w), X0, K=64)
    assert law.pk.min() >= 0
    assert law.total == pytest.approx(1.0, abs=1e-9)
    s = np.linspace(0.0, 1.0, 7)
    psi0 = lambda z: m.psi0(X0, z)  # noqa: E731
    rhs = np.array([(psi0(w * (1 - si)) - (1 - si) * psi0(w)) / w for si in s])
    lhs = law.q * (np.sum(law.pk * (s[:, None] ** law.ks - s[:, None]), axis=1) + law.tail * (0.0 - s))
    # tail mass enters with s^k -> 0 for k > K; bounded by tail * s^K
    assert np.max(np.abs(lhs - rhs)) <= 1e-7 + law.q * law.tail


@settings(max_examples=25, deadline=None)
@given(beta=st.floats(-2.0, 3.0), alpha=st.floats(0.0, 2.0), w=st.floats(0.01, 3.0))
def test_star_beta_below_beta(beta, alpha, w):
    m = BranchingMechanism(const(beta), const(alpha), LevyKernel("tempered", a=0.6, b=1.0, c=0.5))
    assert float(star_transform(m, const(w)).beta_star(X0)) <= beta + 1e-12


@settings(max_examples=20, deadline=None)
@given(z=st.floats(0.0, 5.0), w=st.floats(0.1, 2.0))
def test_star_mechanism_is_shifted_psi(z, w):
    m = BranchingMechanism(const(1.0), const(0.5), LevyKernel("tempered", a=0.5, b=1.0, c=0.5))
    star = star_transform(m, const(w)).as_mechanism()
    assert star.psi(X0, z) == pytest.approx(m.psi(X0, z + w) - m.psi(X0, w), rel=1e-8, abs=1e-10)
