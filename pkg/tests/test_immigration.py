import numpy as np
import pytest

from skelsim.diagnostics import feller_variance
from skelsim.errors import ConfigError
from skelsim.functions import Indicator, gaussian
from skelsim.immigration import (MassParticleSystem, conditional_first_moment, dress_skeleton,
                                 dress_skeleton_logged, poisson_coupling, replica_systems, run_super_direct,
                                 run_xstar)
from skelsim.mechanism import star_transform

from conftest import zscore

MU = [(0.0, 1.0)]


@pytest.fixture(scope="module")
def xstar(quad):
    return run_xstar(quad, MU, [0.5, 1.0], 8000, 31, m=0.01)


def test_xstar_first_moment(xstar):
    M = xstar.col("mass")
    for j, t in enumerate(xstar.times):
        assert abs(zscore(M[:, j], np.exp(-t))) <= 3


def test_xstar_variance(quad, xstar):
    star = star_transform(quad.mech, quad.w).as_mechanism()
    M = xstar.col("mass")[:, 1]
    oracle = feller_variance(star, 1.0, 1.0)
    n = M.size
    c = M - M.mean()
    se = np.sqrt((np.mean(c**4) - np.mean(c**2) ** 2) / n)
    assert abs(M.var(ddof=1) - oracle) <= 3 * se


def test_mass_particle_systems(xstar):
    systems = replica_systems(xstar, 0.01)
    assert len(systems) == xstar.stats.shape[0]
    assert np.allclose(systems[3].mass, 0.01 * systems[3].count)
    with pytest.raises(ValueError):
        MassParticleSystem(0.01, np.array([1.0]), np.array([3]), np.array([0.5]), np.array([0.5]))


def test_invalid_units(quad):
    with pytest.raises(ConfigError):
        dress_skeleton(quad, MU, [1.0], 2, 0, m=0.0)
    with pytest.raises(ConfigError):
        dress_skeleton(quad, MU, [1.0], 2, 0, eps=-1.0)


def test_quadratic_card_only_continuous_immigration(quad):
    res = dress_skeleton(quad, MU, [1.0], 500, 5)
    assert res.count("imm_b").sum() == 0 and res.count("imm_b_small").sum() == 0
    assert res.count("imm_a").sum() > 0
    ledger, _, _ = dress_skeleton_logged(quad, MU, [2.0], seed=5, replica=1)
    counts = ledger.source_counts()
    assert counts["jump"] == 0
    # branch-point masses are Y_u = 0 for dyadic branching
    bp = ledger.entries[ledger.entries[:, 1] == 3]
    assert np.all(bp[:, 2] == 0) if bp.size else True


def test_ledger_within_lifetimes(tempered):
    for r in range(5):
        ledger, _, _ = dress_skeleton_logged(tempered, MU, [1.5], seed=8, replica=r)
        assert ledger.within_lifetimes()
        rows = list(ledger.rows())
        assert all(row["mass"] >= 0 for row in rows)
        assert all(row["source"] in ("trajectory", "jump", "branch-point") for row in rows)


def test_ledger_has_all_three_sources(tempered):
    seen = {"trajectory": 0, "jump": 0, "branch-point": 0}
    for r in range(20):
        ledger, _, _ = dress_skeleton_logged(tempered, MU, [2.0], seed=4, replica=r)
        for k, v in ledger.source_counts().items():
            seen[k] += v
    assert all(v > 0 for v in seen.values()), seen


@pytest.mark.parametrize("card_name", ["quad", "tempered"])
def test_conditional_first_moment(card_name, request):
    card = request.getfixturevalue(card_name)
    rep = conditional_first_moment(card, 0.5, 0.5, 3000, 12, m=0.01)
    assert rep.passed, rep.line()


def test_poisson_coupling(quad):
    res = dress_skeleton(quad, MU, [1.0], 3000, 21)
    rep = poisson_coupling(res, quad)
    assert rep.passed, rep.line()
    # conditional Poisson law: residual variance equals w E[mass]
    assert rep.metadata["resid_var"] == pytest.approx(rep.metadata["poisson_var"], rel=0.1)


@pytest.fixture(scope="module")
def both_modes(quad):
    fs = (Indicator(-1, 1, "ind"), gaussian(0.5, -1.0, "bump"))
    times = [0.5, 1.0]
    d = run_super_direct(quad, MU, times, 3000, 100, m=0.01, functions=fs)
    c = dress_skeleton(quad, MU, times, 3000, 200, m=0.01, eps=0.05, functions=fs)
    return d, c


def test_direct_martingale_means(both_modes):
    d, _ = both_modes
    for j in range(2):
        assert abs(zscore(d.col("W_X")[:, j], 1.0)) <= 3


def test_composition_consistency(both_modes):
    d, c = both_modes
    for col in ("W_X", "X.ind", "X.bump"):
        for j in range(2):
            a = np.exp(-d.col(col)[:, j]) if col != "W_X" else d.col(col)[:, j]
            b = np.exp(-c.col(col)[:, j]) if col != "W_X" else c.col(col)[:, j]
            se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
            assert abs(a.mean() - b.mean()) <= 3 * se, (col, j)


def test_seed_determinism_and_jobs(quad):
    a = dress_skeleton(quad, MU, [1.0], 64, 99, jobs=1)
    b = dress_skeleton(quad, MU, [1.0], 64, 99, jobs=2)
    assert np.array_equal(a.stats, b.stats) and np.array_equal(a.counts, b.counts)
    c = dress_skeleton(quad, MU, [1.0], 64, 100)
    assert not np.array_equal(a.stats, c.stats)
