"""Statistical checks of the simulators against analytic oracles.

Each check returns a :class:`RunReport`; pass means |z| <= 3 and, where a
metric is given, metric <= threshold.
"""
from __future__ import annotations

import numpy as np

from .catalog import ExampleCard
from .engine import EngineSetup, simulate
from .errors import UnsupportedError
from .functions import Callable1, Indicator, Profile, SpatialFunction, as_points, const
from .mechanism import csbp_root
from .mildsolver import laplace_functional, solve_mild
from .motion import ou_moments, spine_expectation
from .reports import RunReport, weighted_slope
from .spine import occupation_distance, spine_paths

__all__ = [
    "RunReport",
    "feller_variance",
    "variance_oracle",
    "many_to_one_oracle",
    "check_many_to_one",
    "check_variance",
    "check_laplace",
    "martingale_means",
    "martingale_flatness",
    "coupling_report",
    "slln_curve",
    "extinction_frequency",
    "ergodic_occupation",
    "mean_report",
    "standard_functions",
]


def _meta(card, **kw):
    return {"card": card.name, **kw}


def mean_report(name: str, values: np.ndarray, oracle: float, **meta) -> RunReport:
    """Sample mean of ``values`` against an exact oracle."""
    v = np.asarray(values, float)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return RunReport(name, estimate=float(v.mean()), se=se, oracle=float(oracle), metadata=dict(meta))


# ---------------------------------------------------------------- oracles

def _branching_variance_rate(mech, x) -> float:
    """2 alpha(x) + int y^2 Pi(x, dy): the second derivative of psi at 0."""
    x = as_points(x)
    v = 2.0 * float(mech.alpha(x))
    if not mech.pi.is_zero:
        v += mech.pi.moment(x, 2)
    return v


def feller_variance(mech, mass: float, t: float) -> float:
    """Var <1, X_t> for a spatially constant mechanism started from total mass ``mass``."""
    if not mech.spatially_constant:
        raise UnsupportedError("closed form needs a spatially constant mechanism")
    x0 = np.zeros(1)
    beta = float(mech.beta(x0))
    s2 = _branching_variance_rate(mech, x0)
    if beta == 0:
        return float(s2 * mass * t)
    return float(s2 * mass * np.exp(beta * t) * np.expm1(beta * t) / beta)


def variance_oracle(card: ExampleCard, f, x0: float, t: float, n_time: int = 201, n_gh: int = 80) -> float:
    """Var <f, X_t> from delta_{x0} for an OU card with constant beta and branching variance.

    Var = int_0^t e^{beta s} E_{x0}[ s2 (S_{t-s} f)^2 (xi_s) ] ds with
    S_u f(y) = e^{beta u} E_y f(xi_u); the inner expectation uses
    Gauss-Hermite nodes, the outer integral Simpson's rule.
    """
    from scipy.integrate import simpson

    motion, mech = card.motion, card.mech
    if motion.kind != "ou" or motion.dim != 1 or not mech.spatially_constant:
        raise UnsupportedError("nested quadrature oracle implemented for 1-d OU cards with constant mechanism")
    x = np.zeros(1)
    beta = float(mech.beta(x))
    s2 = _branching_variance_rate(mech, x)
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_gh)
    weights = weights / weights.sum()

    def S(u, y):
        mean, var = ou_moments(motion.gamma, y, u)
        vals = np.array([f.gauss_expect(np.array([m]), var) for m in np.atleast_1d(mean)], float)
        return np.exp(beta * u) * vals

    ss = np.linspace(0.0, t, n_time)
    inner = np.empty_like(ss)
    for i, s in enumerate(ss):
        mean, var = ou_moments(motion.gamma, np.array([x0], float), s)
        ys = mean[0] + np.sqrt(var) * nodes
        inner[i] = np.exp(beta * s) * s2 * np.sum(weights * S(t - s, ys) ** 2)
    return float(simpson(inner, x=ss))


def _over_phi(f, phi):
    """f / phi as a spatial function (with a scalar shortcut for constant phi)."""
    if phi.is_constant:
        c = float(phi(np.zeros(1)))
        if isinstance(f, Profile):
            return f * (1.0 / c)
        return Callable1(lambda x, f=f, c=c: f(x) / c, name=f"{f.name}/phi")
    if isinstance(f, Profile) and isinstance(phi, Profile):
        return f / phi
    return Callable1(lambda x, f=f, p=phi: f(x) / p(x), name=f"{getattr(f, 'name', 'f')}/phi")


def many_to_one_oracle(card: ExampleCard, f, mu, t: float) -> float:
    """<P^phi[(f/phi)(xi_t)], phi mu>, by Gaussian quadrature for OU spines."""
    phi = card.eigen.phi
    g = _over_phi(f, phi)
    total = 0.0
    for x, m in mu:
        p = as_points(x)
        ph = float(phi(p))
        if t == 0:
            total += m * ph * float(g(p))
        elif phi.is_constant and isinstance(f, SpatialFunction):
            total += m * ph * spine_expectation(card, f, p, t) / ph
        else:
            total += m * ph * spine_expectation(card, g, p, t)
    return float(total)


# ---------------------------------------------------------------- simulator checks

def _z_weight(card, f):
    """Column transform for <(phi/w)(f/phi), Z> = <f/w, Z> (constant w only)."""
    if not card.w.is_constant:
        raise UnsupportedError("Z-side statistics implemented for constant w")
    return 1.0 / float(card.w(np.zeros(card.motion.dim)))


def check_many_to_one(card: ExampleCard, f, mu, t: float, replicas: int, seed: int, m: float = 0.01, jobs=None):
    """(X report, Z report): e^{-lam t}<f, X_t> and e^{-lam t}<f/w, Z_t> against the spine oracle."""
    oracle = many_to_one_oracle(card, f, mu, t)
    disc = np.exp(-card.lam * t)
    times = [t]
    rx = simulate(EngineSetup(card, "direct", m=m, functions=(f,)), mu, times, replicas, seed, jobs)
    vx = disc * rx.col(f"X.{f.name}")[:, 0]
    rz = simulate(EngineSetup(card, "skeleton", functions=(f,)), mu, times, replicas, seed + 1, jobs)
    vz = disc * _z_weight(card, f) * rz.col(f"Z.{f.name}")[:, 0]
    meta = _meta(card, t=t, replicas=replicas, seed=seed, m=m, f=f.name)
    return (mean_report(f"many-to-one X t={t}", vx, oracle, **meta),
            mean_report(f"many-to-one Z t={t}", vz, oracle, **meta))


def _var_se(v: np.ndarray) -> float:
    """Standard error of the sample variance from the fourth central moment."""
    n = v.size
    c = v - v.mean()
    m2 = np.mean(c**2)
    m4 = np.mean(c**4)
    return float(np.sqrt(max(m4 - m2 * m2 * (n - 3) / (n - 1), 0.0) / n))


def check_variance(card: ExampleCard, f, mu, t: float, replicas: int, seed: int, m: float = 0.01, jobs=None) -> RunReport:
    """Sample variance of <f, X_t> (direct mode) against the variance formula."""
    mech = card.mech
    if not mech.pi.is_zero and not np.isfinite(mech.pi.moment(np.zeros(1), 2)):
        raise UnsupportedError("jump kernel without second moment: variance is infinite")
    if len(mu) != 1:
        raise UnsupportedError("variance oracle implemented for a single atom")
    (x0, mass), = mu
    if t == 0:
        oracle = 0.0
    elif f.is_constant and mech.spatially_constant:
        oracle = float(f(np.zeros(1))) ** 2 * feller_variance(mech, mass, t)
    else:
        oracle = mass * variance_oracle(card, f, float(as_points(x0)[0]), t)
    res = simulate(EngineSetup(card, "direct", m=m, functions=(f,)), mu, [t], replicas, seed, jobs)
    v = res.col(f"X.{f.name}")[:, 0]
    return RunReport(f"variance t={t}", estimate=float(v.var(ddof=1)), se=_var_se(v), oracle=oracle,
                     metadata=_meta(card, t=t, replicas=replicas, seed=seed, m=m, f=f.name))


def check_laplace(card: ExampleCard, f, mu, t: float, replicas: int, seed: int, mode: str = "direct",
                  m: float = 0.01, eps: float = 0.05, jobs=None, sol=None, solver_dt: float = 0.02) -> RunReport:
    """MC mean of exp(-<f, X_t>) against exp(-<u_f(., t), mu>) from the mild solver."""
    if mode not in ("direct", "composed"):
        raise ValueError("mode must be 'direct' or 'composed'")
    meta = _meta(card, t=t, replicas=replicas, seed=seed, m=m, eps=eps, mode=mode, f=f.name)
    if f.is_constant and float(f(np.zeros(card.motion.dim))) == 0.0:
        return RunReport(f"laplace {mode} {f.name}", estimate=1.0, se=0.0, oracle=1.0, metadata=meta)
    if sol is None:
        sol = solve_mild(card.mech, card.motion, f, T=t, dt=solver_dt)
    oracle = laplace_functional(sol, mu, t)
    res = simulate(EngineSetup(card, mode, m=m, eps=eps, functions=(f,)), mu, [t], replicas, seed, jobs)
    v = np.exp(-res.col(f"X.{f.name}")[:, 0])
    rep = mean_report(f"laplace {mode} {f.name}", v, oracle, **meta)
    rep.metadata["solver_richardson_change"] = sol.meta.get("richardson_change", float("nan"))
    return rep


def martingale_means(times, W: np.ndarray, oracle: float, name: str) -> list[RunReport]:
    """One mean report per snapshot time for a (replicas, times) array of martingale values."""
    return [mean_report(f"{name} mean t={t:g}", W[:, i], oracle, t=float(t)) for i, t in enumerate(times)]


def martingale_flatness(times, W: np.ndarray, name: str = "W") -> RunReport:
    """Weighted regression slope of the replica means of W_t on t; zero within 3 SE."""
    W = np.asarray(W, float)
    mean = W.mean(axis=0)
    se = W.std(axis=0, ddof=1) / np.sqrt(W.shape[0]) if W.shape[0] > 1 else np.zeros(W.shape[1])
    slope, sse = weighted_slope(times, mean, se)
    if np.all(W == W[:, :1]):
        slope, sse = 0.0, 0.0
    return RunReport(f"{name} flatness", estimate=slope, se=sse, oracle=0.0,
                     metadata={"times": list(map(float, times)), "means": mean.tolist()})


def _corr(a, b) -> float:
    if np.std(a) == 0 or np.std(b) == 0:
        return 1.0 if np.allclose(a, b) else 0.0
    return float(np.corrcoef(a, b)[0, 1])


def coupling_report(WX: np.ndarray, WZ: np.ndarray, min_corr: float = 0.95, max_gap: float = 0.1,
                    name: str = "W_X vs W_Z") -> list[RunReport]:
    """Correlation and mean absolute difference of two coupled martingale samples."""
    c = _corr(WX, WZ)
    gap = float(np.mean(np.abs(WX - WZ)))
    return [RunReport(f"{name} correlation", estimate=c, metric=1.0 - c, threshold=1.0 - min_corr),
            RunReport(f"{name} mean |difference|", estimate=gap, metric=gap, threshold=max_gap)]


def slln_curve(card: ExampleCard, f, mu, T_grid, replicas: int, seed: int, m: float = 0.05, eps: float = 0.05,
               jobs=None, min_corr: float = 0.95, max_gap: float = 0.1):
    """R_t = e^{-lam t}<f, X_t>/<f, phi~> against W_t^phi(X) along T_grid (composed runs).

    Returns (reports at T_max, per-time table).  The table holds the mean gap
    |R_t - W_t|, the correlation, and the ratio form <f,X_t>/E<f,X_t> against
    W_t/<phi, mu>.
    """
    T_grid = np.asarray(T_grid, float)
    res = simulate(EngineSetup(card, "composed", m=m, eps=eps, functions=(f,)), mu, T_grid, replicas, seed, jobs)
    fphi = card.stationary_expectation(f)
    phi_mu = sum(m_ * float(card.eigen.phi(as_points(x))) for x, m_ in mu)
    X = res.col(f"X.{f.name}")
    W = res.col("W_X")
    R = np.exp(-card.lam * T_grid)[None, :] * X / fphi
    table = []
    for i, t in enumerate(T_grid):
        mean_fx = X[:, i].mean()
        ratio = X[:, i] / mean_fx if mean_fx > 0 else np.zeros_like(X[:, i])
        table.append(dict(t=float(t), mean_gap=float(np.mean(np.abs(R[:, i] - W[:, i]))),
                          corr=_corr(R[:, i], W[:, i]),
                          ratio_gap=float(np.mean(np.abs(ratio - W[:, i] / phi_mu)))))
    reps = coupling_report(R[:, -1], W[:, -1], min_corr, max_gap * phi_mu, name=f"R vs W at T={T_grid[-1]:g}")
    extinct = res.col("mass")[:, -1] == 0
    if extinct.any():
        reps.append(RunReport("R and W vanish on extinction", estimate=float(np.max(np.abs(R[extinct, -1]) + np.abs(W[extinct, -1]))),
                              metric=float(np.max(np.abs(R[extinct, -1]) + np.abs(W[extinct, -1]))), threshold=0.0))
    for r in reps:
        r.metadata.update(_meta(card, replicas=replicas, seed=seed, m=m, eps=eps, f=f.name))
    return reps, table


def extinction_frequency(card: ExampleCard, mu, T: float, replicas: int, seed: int, m: float = 0.01,
                         tol: float = 0.015, stop_mass: float = 20.0, t_check: float = 1.0, jobs=None):
    """Fraction of extinct direct-mode replicas at T against exp(-z* <1, mu>).

    Replicas whose mass exceeds ``stop_mass`` are frozen: their extinction
    probability from there on is exp(-z* stop_mass), far below the
    resolution of the check.  Also returns the check
    E[exp(-<w, X_t>)] = exp(-<w, mu>) at ``t_check``.
    """
    mech = card.mech
    total = sum(float(a) for _, a in mu)
    if total == 0:
        return [RunReport("extinction frequency", estimate=1.0, se=0.0, oracle=1.0)]
    zs = csbp_root(mech)
    oracle = float(np.exp(-(zs or 0.0) * total))
    times = sorted({t_check, T})
    res = simulate(EngineSetup(card, "direct", m=m, stop_mass=stop_mass), mu, times, replicas, seed, jobs)
    ext = (res.col("mass")[:, -1] == 0).astype(float)
    freq = float(ext.mean())
    se = float(np.sqrt(max(freq * (1 - freq), 1e-12) / replicas))
    meta = _meta(card, T=T, replicas=replicas, seed=seed, m=m, stop_mass=stop_mass)
    rep = RunReport("extinction frequency", estimate=freq, se=se, oracle=oracle, metric=abs(freq - oracle),
                    threshold=tol, metadata=meta)
    wv = float(card.w(np.zeros(card.motion.dim)))
    i = times.index(t_check)
    # frozen replicas have no later snapshots; their term is below exp(-w stop_mass)
    lap = mean_report(f"martingale-function identity t={t_check:g}",
                      np.nan_to_num(np.exp(-wv * res.col("mass")[:, i]), nan=0.0),
                      np.exp(-wv * total), **meta)
    return [rep, lap]


def ergodic_occupation(card: ExampleCard, T: float = 50.0, bins: int = 20, replicas: int = 2000, seed: int = 0,
                       dt: float = 0.05, threshold: float = 0.03, x0=None, substep: float = 1e-3,
                       window: float = 0.5) -> RunReport:
    """L1 distance between the pooled late-window spine occupation and phi phi~.

    Paths start from x0 (default: the origin, or 1/2 on the interval) and
    are recorded on a dt grid; the last ``window`` fraction of [0, T] is
    pooled over replicas.
    """
    motion = card.spine_motion()
    d = motion.dim
    if d != 1:
        raise UnsupportedError("occupation histograms implemented for d = 1")
    if x0 is None:
        x0 = 0.5 if motion.domain == "interval" else 0.0
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, 11)))
    nt = max(1, int(round(T / dt)))
    times = np.linspace(0.0, T, nt + 1)[1:]
    paths = spine_paths(motion, np.full((replicas, 1), float(x0)), times, rng, substep)
    sel = times >= (1 - window) * T
    samples = paths[:, sel, 0].ravel()
    if motion.domain == "interval":
        lo, hi = 0.0, 1.0
    else:
        sd = np.sqrt(0.5 / motion.gamma) if motion.kind == "ou" and motion.gamma > 0 else 1.0
        lo, hi = -4.5 * sd, 4.5 * sd
    dist = occupation_distance(samples, card.density, lo, hi, bins)
    return RunReport(f"ergodic occupation T={T:g}", estimate=dist, metric=dist, threshold=threshold,
                     metadata=_meta(card, T=T, replicas=replicas, seed=seed, dt=dt, bins=bins))


def standard_functions(card: ExampleCard):
    """The three reference test functions: 1_[-1,1], 0.5 exp(-x^2) and phi."""
    phi = card.eigen.phi
    phi_f = phi if isinstance(phi, Profile) else const(1.0)
    return (Indicator(-1.0, 1.0, name="indicator"), Profile(((0.5, 0.0, 0.0, -1.0),), "bump"),
            Profile(phi_f.terms, "phi") if isinstance(phi_f, Profile) else phi_f)
