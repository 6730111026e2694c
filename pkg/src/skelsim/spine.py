"""Spine paths under the phi-transform, their immigration clocks and L^p diagnostics.

Along a spine path xi, continuous immigration arrives at rate 2 alpha(xi)
(clock D^n) and jump immigration at rate int y Pi(xi, dy), each point
carrying a mass with density proportional to y Pi(xi, dy) (clock D^m).  The
statistic

    <phi, mu> + sum_{D^n} e^{-lam s} phi(xi_s) + sum_{D^m} e^{-lam s} I_s phi(xi_s)

is the conditional mean of the size-biased total weight given the spine;
its (p-1)-th moment controls E[W^p].

When int y Pi(x, dy) diverges at 0, points with mass below ``small_cut`` are
replaced by their conditional mean (a drift), which leaves the first moment
of the statistic unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import ConfigError, UnsupportedError
from .functions import as_points
from .motion import MotionSpec, ou_moments, step_many
from .reports import RunReport, weighted_slope

__all__ = [
    "SpineTrace",
    "LpCurve",
    "spine_paths",
    "run_spine",
    "run_spines",
    "spine_conditional_mass",
    "statistic_curve",
    "lp_bound_estimate",
    "truncation_curvature",
    "truncation_slope",
    "campbell_oracle",
    "occupation_distance",
]


@dataclass
class SpineTrace:
    times: np.ndarray  # recording grid
    path: np.ndarray  # (len(times), d)
    Dn: np.ndarray  # times of continuous immigration
    Dn_pos: np.ndarray
    Dm: np.ndarray  # times of jump immigration
    Dm_mass: np.ndarray
    Dm_pos: np.ndarray
    p: float = 2.0
    phi_mu: float = 1.0
    lam: float = 1.0
    drift: np.ndarray = field(default_factory=lambda: np.zeros(0))  # cumulative small-mass contribution on times
    small_cut: float = 0.0

    def __post_init__(self):
        for arr in (self.Dn, self.Dm):
            if arr.size > 1 and np.any(np.diff(arr) <= 0):
                raise ValueError("clock times must be strictly increasing")
        if np.any(self.Dm_mass <= 0):
            raise ValueError("immigrated masses must be positive")


# ---------------------------------------------------------------- paths

def _is_exact(motion: MotionSpec) -> bool:
    return motion.kind == "ou" and motion.domain == "full"


def spine_paths(motion: MotionSpec, x0: np.ndarray, times: np.ndarray, rng, substep: float = 1e-3) -> np.ndarray:
    """Paths of the motion started at x0 (R, d), recorded at ``times`` (R, nt, d).

    Exact Gaussian transitions for OU motions on R^d, Euler sub-steps of at
    most ``substep`` otherwise.
    """
    x = np.array(x0, dtype=float, copy=True)
    R, d = x.shape
    out = np.empty((R, times.size, d))
    t = 0.0
    alive = np.ones(R, bool)
    for j, tj in enumerate(times):
        h = tj - t
        if h > 0:
            if _is_exact(motion):
                mean, var = ou_moments(motion.gamma, x, h)
                x = mean + np.sqrt(var) * rng.standard_normal(x.shape)
            else:
                n = max(1, int(np.ceil(h / substep - 1e-9)))
                for _ in range(n):
                    x, alive = step_many(motion, x, alive, h / n, rng)
        out[:, j] = x
        t = tj
    return out


def _start_points(mu, phi, rng, R, d):
    pos = np.array([np.broadcast_to(as_points(x), (d,)) for x, _ in mu], float).reshape(-1, d)
    wts = np.array([float(m) for _, m in mu]) * np.asarray(phi(pos), float)
    tot = wts.sum()
    if not tot > 0:
        raise ConfigError("<phi, mu> must be positive")
    idx = rng.choice(len(wts), size=R, p=wts / tot)
    return pos[idx], float(tot)


# ---------------------------------------------------------------- jump masses

def _jump_rate_fn(pi, cut):
    """x -> int_{y > cut} y Pi(x, dy) and x -> int_{y <= cut} y^2 Pi(x, dy)."""
    if pi.is_zero:
        return None, None
    return (lambda x: pi.restricted_moment(x, 1, cut)), (lambda x: pi.restricted_moment(x, 2, 0.0, cut) if cut > 0 else 0.0)


def _sample_mass(pi, x, cut, rng, n: int = 1) -> np.ndarray:
    """n draws from the density proportional to y Pi(x, dy) on (cut, inf)."""
    mod, s, t = pi.local(x)
    if pi.family == "atoms":
        ys = s * np.asarray(pi.sizes, float)
        w = np.asarray(pi.weights, float) * np.exp(-t * ys) * ys * (ys > cut)
        return rng.choice(ys, size=n, p=w / w.sum())
    a, be = pi.a, pi.b + t * s
    u0 = cut / s
    if u0 == 0:
        return s * rng.gamma(1.0 - a, size=n) / be
    out = np.empty(0)
    while out.size < n:
        k = 2 * (n - out.size) + 4
        if a > 1:
            # Pareto proposal for u^{-a} on (u0, inf), tempered by rejection
            u = u0 * rng.random(k) ** (-1.0 / (a - 1.0))
            if be > 0:
                u = u[rng.random(k) < np.exp(-be * (u - u0))]
        else:
            u = rng.gamma(1.0 - a, size=k) / be
            u = u[u > u0]
        out = np.concatenate([out, u])
    return s * out[:n]


def _needs_cut(pi) -> bool:
    return (not pi.is_zero) and pi.family == "tempered" and pi.a > 1


def _sup_on(motion: MotionSpec, fn, box):
    grid = motion.sample_grid(201, half_width=box)
    return max(float(fn(p)) for p in grid)


# ---------------------------------------------------------------- traces

class _Rates:
    """Clock rates along the spine and their thinning bounds, prepared once per card."""

    def __init__(self, card, small_cut, box):
        motion = card.spine_motion()
        d = motion.dim
        mech = card.mech
        pi = mech.pi
        x0 = np.zeros(d)
        self.cut = small_cut if _needs_cut(pi) else 0.0
        big, small = _jump_rate_fn(pi, self.cut)
        self.const_n = mech.alpha.is_constant
        self.const_m = big is None or pi.spatially_constant
        if self.const_n:
            c = 2.0 * float(mech.alpha(x0))
            self.two_alpha = lambda x, c=c: c  # noqa: E731
            self.bn = c
        else:
            self.two_alpha = lambda x: 2.0 * float(mech.alpha(x))  # noqa: E731
            self.bn = 2.0 * _sup_on(motion, self.two_alpha, box)
        if big is None:
            self.big = self.small = None
            self.bm = 0.0
        elif self.const_m:
            cb, cs = big(x0), small(x0)
            self.big = lambda x, c=cb: c  # noqa: E731
            self.small = lambda x, c=cs: c  # noqa: E731
            self.bm = cb
        else:
            self.big, self.small = big, small
            self.bm = 2.0 * _sup_on(motion, big, box)


def run_spine(card, mu, T: float, dt: float = 0.01, rng: np.random.Generator | None = None, p: float = 2.0,
              small_cut: float = 1e-3, box: float = 6.0, substep: float = 1e-3, rates: _Rates | None = None) -> SpineTrace:
    """One spine trace on [0, T] with both immigration clocks.

    Clock points are proposed at rate bounds (grid supremum x2 over a box,
    the exact rate when it is constant) and the path is simulated jointly on
    the recording grid and the proposed times, so thinning uses the exact
    spine position.  A rate above its bound doubles the bound and restarts
    from the same generator state.
    """
    rng = np.random.default_rng() if rng is None else rng
    if T < 0 or dt <= 0:
        raise ConfigError("T must be nonnegative and dt positive")
    rates = _Rates(card, small_cut, box) if rates is None else rates
    bn, bm = rates.bn, rates.bm
    state = rng.bit_generator.state
    for _ in range(40):
        try:
            return _trace(card, mu, T, dt, rng, p, rates, bn, bm, substep)
        except _Violation as e:
            if e.which == "n":
                bn *= 2
            else:
                bm *= 2
            rng.bit_generator.state = state
    raise RuntimeError("thinning bounds could not be established")


class _Violation(Exception):
    def __init__(self, which):
        self.which = which


def _trace(card, mu, T, dt, rng, p, rates, bn, bm, substep):
    cut, big, small, two_alpha = rates.cut, rates.big, rates.small, rates.two_alpha
    motion = card.spine_motion()
    d = motion.dim
    phi = card.eigen.phi
    x0, phi_mu = _start_points(mu, phi, rng, 1, d)
    nt = int(round(T / dt))
    grid = np.linspace(0.0, nt * dt, nt + 1)
    cn = np.cumsum(rng.exponential(1.0 / bn, size=int(bn * T * 1.5 + 20))) if bn > 0 else np.zeros(0)
    while cn.size and cn[-1] < T:
        cn = np.append(cn, cn[-1] + np.cumsum(rng.exponential(1.0 / bn, size=int(bn * T + 20))))
    cn = cn[cn <= T]
    cm = np.zeros(0)
    if bm > 0:
        cm = np.cumsum(rng.exponential(1.0 / bm, size=int(bm * T * 1.5 + 20)))
        while cm.size and cm[-1] < T:
            cm = np.append(cm, cm[-1] + np.cumsum(rng.exponential(1.0 / bm, size=int(bm * T + 20))))
        cm = cm[cm <= T]
    allt = np.concatenate([grid, cn, cm])
    order = np.argsort(allt, kind="stable")
    path = spine_paths(motion, x0, allt[order], rng, substep)[0]
    pos = np.empty_like(path)
    pos[order] = path
    gpos, npos, mpos = pos[: grid.size], pos[grid.size: grid.size + cn.size], pos[grid.size + cn.size:]

    keep_n = np.ones(cn.size, bool)
    for i, x in enumerate([] if rates.const_n else npos):
        r = two_alpha(x)
        if r > bn * (1 + 1e-12):
            raise _Violation("n")
        keep_n[i] = rng.random() * bn < r
    keep_m = np.zeros(cm.size, bool)
    masses = np.zeros(cm.size)
    if rates.const_m and cm.size:
        keep_m[:] = True
        masses = _sample_mass(card.mech.pi, mpos[0], cut, rng, cm.size)
    else:
        for i, x in enumerate(mpos):
            r = big(x)
            if r > bm * (1 + 1e-12):
                raise _Violation("m")
            if rng.random() * bm < r:
                keep_m[i] = True
                masses[i] = _sample_mass(card.mech.pi, x, cut, rng)[0]

    drift = np.zeros(grid.size)
    if small is not None and cut > 0:
        lam = card.lam
        sv = small(None) if rates.const_m else np.array([small(x) for x in gpos])
        g = np.exp(-lam * grid) * np.asarray(phi(gpos), float) * sv
        drift[1:] = np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(grid))
    return SpineTrace(times=grid, path=gpos, Dn=cn[keep_n], Dn_pos=npos[keep_n], Dm=cm[keep_m],
                      Dm_mass=masses[keep_m], Dm_pos=mpos[keep_m], p=p, phi_mu=phi_mu, lam=card.lam,
                      drift=drift, small_cut=cut)


def run_spines(card, mu, T, replicas: int, seed: int, dt: float = 0.05, p: float = 2.0, small_cut: float = 1e-3):
    """Independent traces; replica i uses its own generator keyed by (seed, i)."""
    rates = _Rates(card, small_cut, 6.0)
    out = []
    for i in range(replicas):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, 7)))
        out.append(run_spine(card, mu, T, dt, rng, p=p, small_cut=small_cut, rates=rates))
    return out


# ---------------------------------------------------------------- statistics

def spine_conditional_mass(trace: SpineTrace, card, t: float | None = None, K: float = np.inf) -> float:
    """The conditional-mean statistic up to time t, jump masses capped at K."""
    t = trace.times[-1] if t is None else float(t)
    phi = card.eigen.phi
    lam = trace.lam
    total = trace.phi_mu
    sel = trace.Dn <= t
    if sel.any():
        total += float(np.sum(np.exp(-lam * trace.Dn[sel]) * np.asarray(phi(trace.Dn_pos[sel]), float)))
    sel = trace.Dm <= t
    if sel.any():
        total += float(np.sum(np.exp(-lam * trace.Dm[sel]) * np.minimum(trace.Dm_mass[sel], K)
                              * np.asarray(phi(trace.Dm_pos[sel]), float)))
    if trace.drift.size:
        total += float(np.interp(t, trace.times, trace.drift))
    return total


def statistic_curve(traces, card, t_grid, K: float = np.inf) -> np.ndarray:
    """(replicas, len(t_grid)) array of the statistic."""
    return np.array([[spine_conditional_mass(tr, card, t, K) for t in t_grid] for tr in traces])


@dataclass
class LpCurve:
    t: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    sup: float
    slope: float
    slope_se: float
    p: float

    @property
    def slope_z(self) -> float:
        return self.slope / self.slope_se if self.slope_se > 0 else (0.0 if self.slope == 0 else np.inf)


def _per_replica_slopes(y: np.ndarray, x: np.ndarray):
    xc = x - x.mean()
    s = (y - y.mean(axis=1, keepdims=True)) @ xc / np.sum(xc * xc)
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(s.size)) if s.size > 1 else 0.0


def lp_bound_estimate(traces, card, p: float, t_grid=None, tail: float = 0.5, K: float = np.inf) -> tuple[float, LpCurve]:
    """E[statistic^(p-1)] along a time grid, its supremum and tail flatness.

    Flatness is the weighted regression slope of the mean curve on the last
    ``tail`` fraction of the grid, with the pointwise standard errors.
    """
    if not (1.0 <= p <= 2.0):
        raise ConfigError("p must lie in [1, 2]")
    T = traces[0].times[-1]
    t_grid = np.linspace(0.0, T, 21) if t_grid is None else np.asarray(t_grid, float)
    S = statistic_curve(traces, card, t_grid, K) ** (p - 1.0)
    mean = S.mean(axis=0)
    se = S.std(axis=0, ddof=1) / np.sqrt(S.shape[0]) if S.shape[0] > 1 else np.zeros_like(mean)
    sel = t_grid >= t_grid[0] + (1 - tail) * (t_grid[-1] - t_grid[0])
    slope, slope_se = weighted_slope(t_grid[sel], mean[sel], se[sel])
    curve = LpCurve(t_grid, mean, se, float(mean.max()), slope, slope_se, p)
    return curve.sup, curve


def truncation_slope(traces, card, p: float, Ks=(1e0, 1e1, 1e2, 1e3, 1e4)) -> RunReport:
    """Growth of E[statistic(T; masses capped at K)^(p-1)] in log K.

    A moment that is finite stays bounded as K grows (slope tends to 0); an
    infinite one keeps a positive slope.  The report's estimate is the mean
    per-replica least-squares slope against log K, z its t-statistic.
    """
    Ks = np.asarray(Ks, float)
    S = np.array([[spine_conditional_mass(tr, card, None, K) for K in Ks] for tr in traces]) ** (p - 1.0)
    slope, se = _per_replica_slopes(S, np.log(Ks))
    return RunReport(f"truncation-slope p={p}", estimate=slope, se=se, oracle=0.0,
                     metadata=dict(Ks=Ks.tolist(), means=S.mean(axis=0).tolist(), replicas=len(traces)))


def truncation_curvature(traces, card, p: float, Ks=(1e0, 1e2, 1e4)) -> RunReport:
    """Second difference of E[statistic(T; cap K)^(p-1)] over equally spaced log K.

    With a power-law jump tail the capped moment behaves like a constant
    minus K^-r when it is finite (concave in log K) and like K^r when it
    diverges (convex).  Unlike the slope, this separates the two regimes:
    capping is monotone, so every slope is positive.  z > 3 flags divergence.
    """
    Ks = np.asarray(Ks, float)
    if Ks.size != 3 or not np.isclose(np.log(Ks[1] / Ks[0]), np.log(Ks[2] / Ks[1])):
        raise ConfigError("need three caps equally spaced in log K")
    S = np.array([[spine_conditional_mass(tr, card, None, K) for K in Ks] for tr in traces]) ** (p - 1.0)
    D = S[:, 2] - 2.0 * S[:, 1] + S[:, 0]
    se = float(D.std(ddof=1) / np.sqrt(D.size)) if D.size > 1 else 0.0
    return RunReport(f"truncation-curvature p={p}", estimate=float(D.mean()), se=se, oracle=0.0,
                     metadata=dict(Ks=Ks.tolist(), means=S.mean(axis=0).tolist(), replicas=len(traces)))


def campbell_oracle(card, mu, T: float, n: int = 401) -> float:
    """E[sum_{D^n} e^{-lam s} phi(xi_s)] = int_0^T 2 e^{-lam s} E^phi[(phi alpha)(xi_s)] ds (OU spines)."""
    from .motion import spine_expectation

    phi = card.eigen.phi
    alpha = card.mech.alpha
    g = lambda y: np.asarray(phi(y), float) * np.asarray(alpha(y), float)  # noqa: E731
    pos = [as_points(x) for x, _ in mu]
    wts = np.array([float(m) for _, m in mu]) * np.array([float(phi(p)) for p in pos])
    wts = wts / wts.sum()
    if alpha.is_constant and phi.is_constant:
        lam = card.lam
        return float(2.0 * g(np.zeros(card.motion.dim)) * (-np.expm1(-lam * T) / lam if lam else T))
    s = np.linspace(0.0, T, n)
    if not _is_exact(card.spine_motion()):
        raise UnsupportedError("Campbell quadrature needs an exact spine density")
    vals = np.array([sum(w * spine_expectation(card, g, p, si) for w, p in zip(wts, pos)) for si in s])
    return float(simpson(2.0 * np.exp(-card.lam * s) * vals, x=s))


def occupation_distance(samples: np.ndarray, density, lo: float, hi: float, bins: int = 30) -> float:
    """L1 distance between a histogram of samples and a density, both averaged over the bins."""
    from scipy import integrate

    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(samples, bins=edges)
    emp = counts / max(samples.size, 1)
    ref = np.array([integrate.quad(lambda y: float(np.ravel(density(np.array([[y]])))[0]), a, b)[0] for a, b in zip(edges[:-1], edges[1:])])
    # mass of either outside [lo, hi] counts fully
    outside_emp = 1.0 - emp.sum()
    outside_ref = max(0.0, 1.0 - ref.sum())
    return float(np.sum(np.abs(emp - ref)) + abs(outside_emp - outside_ref))
