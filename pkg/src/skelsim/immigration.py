"""Subcritical dressing of the skeleton, X* and the direct particle approximation of X.

All three are thin wrappers over the compiled engine:

* ``run_xstar`` simulates the subcritical process X* on its own;
* ``dress_skeleton`` runs the skeleton and lets it issue X*-copies through
  the three immigration streams (continuous, jump and branch point);
* ``run_super_direct`` is an independent particle approximation of X with
  the original mechanism, used as an oracle for the composed construction.

Continuous immigration is approximated by seeding mass ``eps`` at rate
2 alpha / eps along each skeleton path (a limit of the excursion measure).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import SRC_A, SRC_B, SRC_C, EngineSetup, SimResult, simulate, simulate_logged
from .errors import ConfigError
from .reports import RunReport

__all__ = [
    "MassParticleSystem",
    "ImmigrationLedger",
    "run_xstar",
    "run_super_direct",
    "dress_skeleton",
    "dress_skeleton_logged",
    "replica_systems",
    "poisson_coupling",
    "conditional_first_moment",
]

SOURCES = {SRC_A: "trajectory", SRC_B: "jump", SRC_C: "branch-point"}


@dataclass(frozen=True)
class MassParticleSystem:
    """Snapshot summary of one replica's mass particles: every atom carries mass m."""

    m: float
    times: np.ndarray
    count: np.ndarray
    mass: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        if not np.allclose(self.mass, self.m * self.count, rtol=1e-9, atol=1e-12):
            raise ValueError("total mass must equal m times the particle count")


def replica_systems(res: SimResult, m: float) -> list[MassParticleSystem]:
    return [MassParticleSystem(m, res.times, res.col("n_mass")[i], res.col("mass")[i], res.col("W_X")[i])
            for i in range(res.stats.shape[0])]


@dataclass
class ImmigrationLedger:
    """Every immigration event of one replica, plus the skeleton genealogy it hangs on.

    ``entries`` columns: issue time, source code, seed mass, issuing skeleton
    id, issuing position (first coordinate).  ``skeleton`` columns: id,
    parent, birth, death (inf while alive).
    """

    entries: np.ndarray
    skeleton: np.ndarray
    branches: np.ndarray

    def source_counts(self) -> dict:
        src = self.entries[:, 1].astype(int)
        return {name: int(np.sum(src == code)) for code, name in SOURCES.items()}

    def within_lifetimes(self) -> bool:
        """Issue times lie in (birth, death] of the issuing skeleton particle."""
        if self.entries.size == 0:
            return True
        ids = self.entries[:, 3].astype(int)
        t = self.entries[:, 0]
        b = self.skeleton[ids, 2]
        d = self.skeleton[ids, 3]
        return bool(np.all((t > b) & (t <= d)))

    def rows(self):
        for t, src, mass, who, pos in self.entries:
            yield {"t": t, "source": SOURCES.get(int(src), "?"), "mass": mass, "issuer": int(who), "x": pos}


def _check(m, eps=None):
    if not m > 0:
        raise ConfigError("mass unit m must be positive")
    if eps is not None and not eps > 0:
        raise ConfigError("epsilon must be positive")


def run_xstar(card, mu, times, replicas: int, seed: int, m: float = 0.01, functions=(), jobs=None) -> SimResult:
    """X* from mu: beta*, alpha and the tilted jump kernel, mass unit m."""
    _check(m)
    return simulate(EngineSetup(card, "xstar", m=m, functions=tuple(functions)), mu, times, replicas, seed, jobs)


def run_super_direct(card, mu, times, replicas: int, seed: int, m: float = 0.01, functions=(), jobs=None,
                     stop_mass: float = np.inf) -> SimResult:
    """Particle approximation of X with the original mechanism.

    ``stop_mass`` freezes a replica once its mass exceeds the value, for
    runs that only need to know whether extinction happened.
    """
    _check(m)
    setup = EngineSetup(card, "direct", m=m, functions=tuple(functions), stop_mass=stop_mass)
    return simulate(setup, mu, times, replicas, seed, jobs)


def dress_skeleton(card, mu, times, replicas: int, seed: int, m: float = 0.01, eps: float = 0.05, functions=(),
                   jobs=None) -> SimResult:
    """X = X*(from mu) + immigration along a skeleton started from Poisson(w mu)."""
    _check(m, eps)
    setup = EngineSetup(card, "composed", m=m, eps=eps, functions=tuple(functions))
    return simulate(setup, mu, times, replicas, seed, jobs)


def dress_skeleton_logged(card, mu, times, seed: int, replica: int = 0, m: float = 0.01, eps: float = 0.05,
                          functions=()):
    """One composed replica with its immigration ledger.  Returns (ledger, stats, counts)."""
    _check(m, eps)
    setup = EngineSetup(card, "composed", m=m, eps=eps, functions=tuple(functions))
    stats, counts, slog, ilog, blog = simulate_logged(setup, mu, times, seed, replica)
    return ImmigrationLedger(ilog, slog, blog), stats, counts


def poisson_coupling(res: SimResult, card, ti: int = -1) -> RunReport:
    """Given X_t, Z_t is Poisson with intensity w X_t: check E[N_t - w M_t] = 0.

    Only for constant w.  With the Poisson law the residual N - wM has
    conditional variance wM, which the report also compares with the
    empirical residual variance (in ``metadata``).
    """
    x0 = np.zeros(card.motion.dim)
    if not card.w.is_constant:
        raise ConfigError("the coupling check needs a constant martingale function")
    wv = float(card.w(x0))
    N = res.col("n_skel")[:, ti]
    M = res.col("mass")[:, ti]
    resid = N - wv * M
    n = resid.size
    rep = RunReport("poisson-coupling", estimate=float(resid.mean()), se=float(resid.std(ddof=1) / np.sqrt(n)),
                    oracle=0.0)
    rep.metadata.update(t=float(res.times[ti]), replicas=n, resid_var=float(resid.var(ddof=1)),
                        poisson_var=float(wv * M.mean()))
    return rep


def conditional_first_moment(card, t: float, s: float, replicas: int, seed: int, m: float = 0.01,
                             eps: float = 0.05, jobs=None) -> RunReport:
    """E<1, X_{t+s}> against E[<S*_s 1, X_t> + <(S_s 1 - S*_s 1)/w, Z_t>] for a spatially constant card.

    Both sides come from the same composed runs; the report compares the
    mean difference with zero.
    """
    mech = card.mech
    if not (mech.spatially_constant and card.w.is_constant):
        raise ConfigError("closed-form semigroups need a spatially constant card")
    from .mechanism import star_transform

    x0 = np.zeros(card.motion.dim)
    wv = float(card.w(x0))
    beta = float(mech.beta(x0))
    bstar = float(star_transform(mech, card.w).beta_star(x0))
    res = dress_skeleton(card, [(x0, 1.0)], [t, t + s], replicas, seed, m=m, eps=eps, jobs=jobs)
    Mt, Ms = res.col("mass")[:, 0], res.col("mass")[:, 1]
    Nt = res.col("n_skel")[:, 0]
    pred = np.exp(bstar * s) * Mt + (np.exp(beta * s) - np.exp(bstar * s)) / wv * Nt
    diff = Ms - pred
    return RunReport("conditional-first-moment", estimate=float(diff.mean()),
                     se=float(diff.std(ddof=1) / np.sqrt(replicas)), oracle=0.0,
                     metadata=dict(t=t, s=s, replicas=replicas, seed=seed, m=m, eps=eps))
