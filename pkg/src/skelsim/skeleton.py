"""The skeleton Z: Poisson initialisation, w-transformed motion, state-dependent branching.

Two implementations share the same law:

* :func:`run_skeleton` is a plain-numpy event loop over one replica.  It
  keeps full genealogy, handles any motion (exact OU transitions, Euler
  sub-steps otherwise) and serves as the reference implementation.
* :func:`simulate_skeleton` drives the compiled engine for many replicas
  and only records snapshot statistics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateSiteError
from .functions import as_function, as_points
from .mechanism import OffspringLaw, skeleton_offspring
from .motion import MotionSpec, ou_moments, step_many

__all__ = [
    "SkeletonState",
    "Snapshot",
    "ThinningViolation",
    "init_skeleton",
    "branch_rate",
    "run_skeleton",
    "martingale_Z",
    "simulate_skeleton",
]


class ThinningViolation(RuntimeError):
    """A branching rate exceeded the thinning bound (caught internally)."""


@dataclass
class SkeletonState:
    """Alive particles plus the full genealogy of one replica."""

    positions: np.ndarray  # (n, d) of the alive particles
    ids: np.ndarray
    clock: float = 0.0
    d: int = 1
    parent: dict = field(default_factory=dict)  # id -> parent id (-1 for roots)
    birth: dict = field(default_factory=dict)
    death: dict = field(default_factory=dict)
    events: list = field(default_factory=list)  # (time, site, offspring count)
    next_id: int = 0
    initial_count: int = 0
    killed: int = 0  # particles lost to the cemetery

    @property
    def count(self) -> int:
        return int(self.ids.size)

    def accounting_ok(self) -> bool:
        return self.count == self.initial_count + sum(k - 1 for _, _, k in self.events) - self.killed

    def copy(self) -> "SkeletonState":
        return SkeletonState(self.positions.copy(), self.ids.copy(), self.clock, self.d, dict(self.parent),
                             dict(self.birth), dict(self.death), list(self.events), self.next_id,
                             self.initial_count, self.killed)


@dataclass(frozen=True)
class Snapshot:
    t: float
    positions: np.ndarray
    ids: np.ndarray

    @property
    def count(self) -> int:
        return int(self.ids.size)


def init_skeleton(mu, w, rng: np.random.Generator, d: int | None = None) -> SkeletonState:
    """Poisson(w(x) m) particles at each atom (x, m) of mu."""
    w = as_function(w)
    pos, ids = [], []
    if d is None:
        d = as_points(mu[0][0]).size if mu else 1
    for x, mass in mu:
        if mass < 0:
            raise ConfigError("atom masses must be nonnegative")
        p = np.broadcast_to(as_points(x), (d,)).astype(float)
        n = int(rng.poisson(float(w(p)) * float(mass))) if mass > 0 else 0
        pos.extend([p] * n)
    n = len(pos)
    ids = np.arange(n)
    st = SkeletonState(np.array(pos, dtype=float).reshape(n, d), ids, 0.0, d, next_id=n, initial_count=n)
    for i in range(n):
        st.parent[i] = -1
        st.birth[i] = 0.0
    return st


def branch_rate(card, x) -> float:
    """q(x) = d/dz psi_0(x, w(x)) - psi_0(x, w(x)) / w(x)."""
    x = as_points(x)
    wx = float(card.w(x))
    if not wx > 0:
        raise DegenerateSiteError(f"w(x) = {wx} at {x}")
    mech = card.mech
    return float(mech.dpsi0(x, wx) - mech.psi0(x, wx) / wx)


class _Laws:
    """Branching rates and offspring laws per site, memoised when nothing depends on x."""

    def __init__(self, card, K):
        self.card, self.K = card, K
        self.constant = card.mech.spatially_constant and card.w.is_constant
        x0 = np.zeros(card.motion.dim)
        self._q = branch_rate(card, x0) if self.constant else None
        self._law = None

    def rate(self, x) -> float:
        return self._q if self.constant else branch_rate(self.card, x)

    def __call__(self, x) -> OffspringLaw:
        if self.constant:
            if self._law is None:
                self._law = skeleton_offspring(self.card.mech, self.card.w, np.zeros(self.card.motion.dim), self.K)
            return self._law
        return skeleton_offspring(self.card.mech, self.card.w, x, self.K)


def _draw_k(law: OffspringLaw, rng) -> int:
    cdf = np.cumsum(np.append(law.pk, max(law.tail, 0.0)))
    j = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), cdf.size - 1)
    if j < law.pk.size:
        return j + 2
    # beyond the table: geometric continuation of the last ratio
    if law.tail_ratio <= 0:
        return law.K + 1
    return law.K + int(rng.geometric(1.0 - law.tail_ratio))


def _q_bar(card, motion: MotionSpec, box: float) -> float:
    grid = motion.sample_grid(201, half_width=box)
    return 1.5 * max(branch_rate(card, p) for p in grid)


def _move_raw(motion: MotionSpec, pos: np.ndarray, dt: float, rng, substep: float):
    alive = np.ones(pos.shape[0], bool)
    if dt <= 0 or pos.shape[0] == 0:
        return pos, alive
    if motion.kind == "ou" and motion.domain == "full":
        mean, var = ou_moments(motion.gamma, pos, dt)
        return mean + np.sqrt(var) * rng.standard_normal(pos.shape), alive
    n = max(1, int(np.ceil(dt / substep)))
    for _ in range(n):
        pos, alive = step_many(motion, pos, alive, dt / n, rng)
    return pos, alive


def _advance(st: SkeletonState, motion: MotionSpec, dt: float, rng, substep: float, t_end: float):
    """Move every alive particle; particles that left the domain go to the cemetery."""
    pos, alive = _move_raw(motion, st.positions, dt, rng, substep)
    if not alive.all():
        for j in st.ids[~alive]:
            st.death[int(j)] = t_end
        st.killed += int((~alive).sum())
        pos, st.ids = pos[alive], st.ids[alive]
    st.positions = pos


def run_skeleton(state: SkeletonState, card, T: float, dt: float = 1e-2, rng: np.random.Generator | None = None,
                 times=None, q_bar: float | None = None, K: int = 64, box: float = 6.0,
                 max_pop: int = 10**6):
    """Advance a skeleton to time T and return (snapshots, final state).

    Branch times come from a race at rate N q_bar with acceptance q(x)/q_bar.
    A rate above q_bar doubles the bound and restarts the replica from its
    initial state and generator state, so the output never depends on a
    violated bound.
    """
    rng = np.random.default_rng() if rng is None else rng
    times = np.array([T] if times is None else times, dtype=float)
    if np.any(np.diff(times) < 0) or (times.size and times[-1] > T + 1e-12):
        raise ConfigError("snapshot times must be sorted and at most T")
    motion = card.skeleton_motion()
    laws = _Laws(card, K)
    if q_bar is None:
        q_bar = laws.rate(None) if laws.constant else _q_bar(card, motion, box)
    rng_state = rng.bit_generator.state
    for _ in range(40):
        try:
            return _run(state.copy(), card, motion, laws, T, dt, rng, times, q_bar, max_pop)
        except ThinningViolation:
            q_bar *= 2.0
            rng.bit_generator.state = rng_state
    raise RuntimeError("thinning bound could not be established")


def _check_bound(st: SkeletonState, laws, q_bar):
    """A bound that is too low may never be caught at a proposal, so also test it at
    the start and at every snapshot."""
    if laws.constant:
        q = laws.rate(None) if st.count else 0.0
    else:
        q = max((laws.rate(x) for x in st.positions), default=0.0)
    if q > q_bar:
        raise ThinningViolation(f"q = {q} > bound {q_bar}")


def _run(st: SkeletonState, card, motion, laws, T, dt, rng, times, q_bar, max_pop):
    _check_bound(st, laws, q_bar)
    snaps = []
    ti = 0
    t = st.clock
    while True:
        n = st.count
        tau = rng.exponential(1.0 / (n * q_bar)) if n > 0 else np.inf
        t_next = t + tau
        while ti < times.size and times[ti] <= min(t_next, T):
            _advance(st, motion, times[ti] - t, rng, dt, times[ti])
            t = times[ti]
            _check_bound(st, laws, q_bar)
            snaps.append(Snapshot(t, st.positions.copy(), st.ids.copy()))
            ti += 1
        if t_next > T:
            _advance(st, motion, T - t, rng, dt, T)
            st.clock = T
            return snaps, st
        _advance(st, motion, t_next - t, rng, dt, t_next)
        t = t_next
        n = st.count
        if n == 0:
            continue
        i = int(rng.integers(n))
        x = st.positions[i]
        q = laws.rate(x)
        if q > q_bar:
            raise ThinningViolation(f"q = {q} > bound {q_bar} at {x}")
        if rng.random() * q_bar >= q:
            continue
        k = _draw_k(laws(x), rng)
        dead = int(st.ids[i])
        st.death[dead] = t
        st.events.append((t, x.copy(), k))
        new_ids = np.arange(st.next_id, st.next_id + k)
        for j in new_ids:
            st.parent[int(j)] = dead
            st.birth[int(j)] = t
        st.next_id += k
        st.positions = np.concatenate([np.delete(st.positions, i, axis=0), np.repeat(x[None, :], k, axis=0)])
        st.ids = np.concatenate([np.delete(st.ids, i), new_ids])
        if st.count > max_pop:
            raise RuntimeError("skeleton population cap exceeded")


def martingale_Z(snapshot: Snapshot, card) -> float:
    """e^{-lambda t} sum_i phi(xi_i) / w(xi_i)."""
    if snapshot.count == 0:
        return 0.0
    p = snapshot.positions
    val = np.sum(np.asarray(card.eigen.phi(p), float) / np.asarray(card.w(p), float))
    return float(np.exp(-card.lam * snapshot.t) * val)


def simulate_skeleton(card, mu, times, replicas: int, seed: int, functions=(), jobs=None, K: int = 64):
    """Many replicas of Z through the compiled engine (snapshot statistics only)."""
    from .engine import EngineSetup, simulate

    setup = EngineSetup(card, "skeleton", functions=tuple(functions), K=K)
    return simulate(setup, mu, times, replicas, seed, jobs=jobs)
