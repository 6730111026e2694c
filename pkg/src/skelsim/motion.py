"""Diffusion motions, exact OU sampling and h-transforms."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import InvalidHError, NumericBlowupError, UnsupportedError
from .functions import Callable1, Profile, SpatialFunction, as_function, as_points, const
from .mechanism import BranchingMechanism

__all__ = [
    "MotionSpec",
    "PathState",
    "ou_moments",
    "step",
    "step_many",
    "exact_ou_sample",
    "h_transform",
    "spine_expectation",
    "gauss_expectation",
]


@dataclass(frozen=True)
class MotionSpec:
    """Diffusion with generator 1/2 tr(a D^2) + b.grad (b is the Ito drift).

    ``kind='ou'`` means b(x) = -gamma x and a = I on R^d (gamma < 0 is the
    outward process, gamma = 0 Brownian motion).  ``kind='generic'`` takes
    vectorised callables.  Interval domains are (0, 1); ``conservative``
    selects rejection of boundary-crossing proposals instead of absorption.
    """

    kind: str = "ou"
    dim: int = 1
    gamma: float = 1.0
    drift_fn: Callable | None = None
    diffusion_fn: Callable | None = None
    domain: str = "full"
    conservative: bool = True
    dt: float = 1e-3
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("ou", "generic"):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.kind == "generic" and (self.drift_fn is None or self.diffusion_fn is None):
            raise ValueError("generic motion needs drift_fn and diffusion_fn")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def exact_tag(self) -> str:
        if self.kind != "ou":
            return "none"
        if self.gamma > 0:
            return "ou-inward"
        if self.gamma < 0:
            return "ou-outward"
        return "brownian"

    def drift(self, x) -> np.ndarray:
        x = as_points(x)
        if self.kind == "ou":
            return -self.gamma * x
        return np.asarray(self.drift_fn(x), dtype=float)

    def diffusion(self, x) -> np.ndarray:
        x = as_points(x)
        if self.kind == "ou":
            return np.broadcast_to(np.eye(x.shape[-1]), x.shape + (x.shape[-1],)).copy()
        return np.asarray(self.diffusion_fn(x), dtype=float)

    def generator(self, h: SpatialFunction, x) -> np.ndarray:
        """(L h)(x) from the analytic gradient and Hessian of h."""
        x = as_points(x)
        a = self.diffusion(x)
        H = h.hess(x)
        return 0.5 * np.sum(a * H, axis=(-2, -1)) + np.sum(self.drift(x) * h.grad(x), axis=-1)

    def inside(self, x) -> np.ndarray:
        x = as_points(x)
        if self.domain == "interval":
            return np.all((x > 0) & (x < 1), axis=-1)
        return np.all(np.isfinite(x), axis=-1)

    def sample_grid(self, n=201, half_width=4.0) -> np.ndarray:
        if self.domain == "interval":
            g = np.linspace(0, 1, n + 2)[1:-1]
        else:
            g = np.linspace(-half_width, half_width, n)
        if self.dim == 1:
            return g[:, None]
        pts = np.zeros((n, self.dim))
        pts[:, 0] = g
        return pts


@dataclass
class PathState:
    position: np.ndarray
    clock: float = 0.0
    alive: bool = True


def ou_moments(gamma: float, x, t: float):
    """Mean and per-coordinate variance of dX = -gamma X dt + dW after time t."""
    x = np.asarray(x, dtype=float)
    if abs(gamma * t) < 1e-12:
        return x.copy(), float(t)
    return x * np.exp(-gamma * t), float(-np.expm1(-2.0 * gamma * t) / (2.0 * gamma))


def exact_ou_sample(gamma: float, inward: bool, x, t: float, rng: np.random.Generator):
    """Exact OU transition; ``inward=False`` flips the sign of the drift."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    g = gamma if inward else -gamma
    mean, var = ou_moments(g, x, t)
    return mean + np.sqrt(var) * rng.standard_normal(np.shape(mean))


def _sqrt_a(motion: MotionSpec, x):
    a = motion.diffusion(x)
    if motion.kind == "ou":
        return a
    if a.shape[-1] == 1:
        return np.sqrt(np.maximum(a, 0.0))
    return np.linalg.cholesky(a)


def step_many(motion: MotionSpec, x: np.ndarray, alive: np.ndarray, dt: float, rng, max_reject=50):
    """Euler-Maruyama step for an array of paths (n, d); returns (x', alive')."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(x, dtype=float)
    alive = np.array(alive, dtype=bool)
    idx = np.flatnonzero(alive)
    if idx.size == 0:
        return x, alive
    xi = x[idx]
    if motion.kind == "ou" and motion.domain == "full":
        mean, var = xi - motion.gamma * xi * dt, dt
        x[idx] = mean + np.sqrt(var) * rng.standard_normal(xi.shape)
        return x, alive
    b = motion.drift(xi)
    if not np.all(np.isfinite(b)):
        raise NumericBlowupError("non-finite drift")
    sig = _sqrt_a(motion, xi)
    sdt = np.sqrt(dt)

    def propose(rows):
        z = rng.standard_normal((rows.size, xi.shape[-1]))
        return xi[rows] + b[rows] * dt + sdt * np.einsum("nij,nj->ni", sig[rows], z)

    new = propose(np.arange(idx.size))
    if motion.domain == "interval":
        bad = ~motion.inside(new)
        if motion.conservative:
            tries = 0
            while bad.any() and tries < max_reject:
                rows = np.flatnonzero(bad)
                new[rows] = propose(rows)
                bad = ~motion.inside(new)
                tries += 1
            if bad.any():
                new[bad] = np.clip(new[bad], 1e-12, 1 - 1e-12)
        else:
            alive[idx[bad]] = False
            new[bad] = np.nan
    x[idx] = new
    return x, alive


def step(motion: MotionSpec, s: PathState, dt: float, rng) -> PathState:
    if not s.alive:
        raise ValueError("cannot step a path in the cemetery")
    x, alive = step_many(motion, np.atleast_2d(as_points(s.position)), np.array([True]), dt, rng)
    return PathState(position=x[0], clock=s.clock + dt, alive=bool(alive[0]))


def _check_h(h: SpatialFunction, motion: MotionSpec):
    grid = motion.sample_grid(101)
    hv = h(grid)
    try:
        gv = h.grad(grid)
        Hv = h.hess(grid)
    except NotImplementedError as exc:
        raise InvalidHError(str(exc)) from exc
    if not (np.all(np.isfinite(hv)) and np.all(hv > 0)):
        raise InvalidHError("h must be finite and positive on the sample grid")
    if not (np.all(np.isfinite(gv)) and np.all(np.isfinite(Hv))):
        raise InvalidHError("grad h or Hess h not finite on the sample grid")


def h_transform(motion: MotionSpec, mech: BranchingMechanism, h) -> tuple[MotionSpec, BranchingMechanism]:
    """Doob h-transform of the pair (motion, mechanism).

    Drift gains a grad(h)/h, beta becomes (L + beta)h/h, alpha becomes
    alpha h and the jump kernel has its sizes multiplied by h.
    """
    h = as_function(h)
    _check_h(h, motion)
    se = h.single_exponential if isinstance(h, Profile) else None
    if motion.kind == "ou" and se is not None:
        k = se[1]
        d = motion.dim
        new_motion = replace(motion, gamma=motion.gamma - 2.0 * k)
        lh_over_h = const(k * d) + Profile(((0.0, 2.0 * k * (k - motion.gamma), 0.0, 0.0),))
    else:
        m0 = motion

        def drift_fn(x, m0=m0, h=h):
            x = as_points(x)
            a = m0.diffusion(x)
            return m0.drift(x) + np.einsum("...ij,...j->...i", a, h.grad(x)) / h(x)[..., None]

        new_motion = replace(motion, kind="generic", drift_fn=drift_fn, diffusion_fn=m0.diffusion,
                             conservative=True)
        lh_over_h = Callable1(lambda x, m0=m0, h=h: m0.generator(h, x) / h(x))
    beta = mech.beta
    if isinstance(beta, Profile) and isinstance(lh_over_h, Profile):
        beta_h = beta + lh_over_h
    else:
        beta_h = Callable1(lambda x, b0=beta, l=lh_over_h: b0(x) + l(x))
    alpha_h = mech.alpha * h
    return new_motion, BranchingMechanism(beta_h, alpha_h, mech.pi.rescaled(h))


def _gauss_quad_1d(g, mean, var):
    s = np.sqrt(var)
    dens = lambda y: np.exp(-0.5 * ((y - mean) / s) ** 2) / (s * np.sqrt(2 * np.pi))  # noqa: E731
    val, _ = integrate.quad(lambda y: float(np.asarray(g(np.array([y])))) * dens(y),
                            mean - 14 * s, mean + 14 * s, limit=500, epsabs=1e-13, epsrel=1e-11)
    return val


def gauss_expectation(g, mean, var) -> float:
    """E[g(Y)], Y ~ N(mean, var I)."""
    mean = as_points(mean)
    if var <= 0:
        return float(np.asarray(g(mean)))
    if isinstance(g, SpatialFunction):
        v = g.gauss_expect(mean, var)
        if v is not None:
            return float(v)
    if mean.size == 1:
        return _gauss_quad_1d(g, float(mean[0]), var)
    nodes, weights = np.polynomial.hermite_e.hermegauss(40)
    weights = weights / weights.sum()
    grids = np.meshgrid(*([nodes] * mean.size), indexing="ij")
    pts = np.stack([gr.ravel() for gr in grids], axis=-1) * np.sqrt(var) + mean
    wts = np.prod(np.meshgrid(*([weights] * mean.size), indexing="ij"), axis=0).ravel()
    return float(np.sum(wts * np.asarray(g(pts))))


def spine_expectation(card, g, x, t: float) -> float:
    """P^phi_x[g(xi_t)] for the phi-transformed (spine) motion of a card."""
    g = as_function(g) if not callable(g) else g
    spine = card.spine_motion()
    if spine.kind == "ou" and spine.domain == "full":
        mean, var = ou_moments(spine.gamma, as_points(x), t)
        return gauss_expectation(g, mean, var)
    horizon = getattr(card, "ergodic_horizon", 30.0)
    if t >= horizon:
        return card.stationary_expectation(g)
    raise UnsupportedError("spine has no closed-form density below the ergodic fallback horizon")
