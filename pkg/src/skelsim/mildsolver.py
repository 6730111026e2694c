"""Picard solver for the mild equation and the CSBP Laplace-exponent ODE.

The mild equation

    u(x,t) + int_0^t S_s[psi_0(., u(., t-s))](x) ds = S_t f(x) + int_0^t S_s[g(., t-s)](x) ds

(S the Feynman-Kac semigroup with potential beta) is solved on a 1-d grid by
the monotone iteration u_{n+1} = F_k u_n from u_0 = 0, where

    F_k u(t) = e^{-kt} S_t f + int_0^t e^{-ks} S_s[g(t-s) + k u(t-s) - psi_0(u(t-s))] ds

and k >= sup_x d/dz psi_0(x, c) for an a-priori bound c on u.  The time
convolution uses the semigroup property, C(t+dt) = e^{-k dt} S_dt C(t) +
(local integral over [0, dt]), so each sweep costs one matrix product per
time step.  Grid functions are piecewise linear in x and constant beyond the
end nodes; for OU motions the Gaussian expectation of every hat function is
exact, otherwise the one-step matrix is estimated by Monte Carlo.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import NonConvergenceError, OutOfRangeError, UnsupportedError
from .functions import SpatialFunction, as_function, as_points
from .mechanism import BranchingMechanism
from .motion import MotionSpec, ou_moments, step_many

__all__ = ["MildSolution", "solve_csbp_ode", "solve_mild", "laplace_functional", "hat_gauss_matrix",
           "gauss_nystrom_matrix"]


@dataclass
class MildSolution:
    x: np.ndarray
    t: np.ndarray
    u: np.ndarray  # (len(t), len(x))
    iterations: int
    residual: float
    k: float
    bound: float
    meta: dict = field(default_factory=dict)

    def at(self, x, t=None) -> np.ndarray:
        """u(x, t) by linear interpolation in x (and in t between nodes)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < self.x[0] - 1e-12) or np.any(x > self.x[-1] + 1e-12):
            raise OutOfRangeError(f"points outside the solver grid [{self.x[0]}, {self.x[-1]}]")
        t = self.t[-1] if t is None else float(t)
        if t < self.t[0] - 1e-12 or t > self.t[-1] + 1e-12:
            raise OutOfRangeError(f"time {t} outside [0, {self.t[-1]}]")
        j = int(np.clip(np.searchsorted(self.t, t) - 1, 0, len(self.t) - 2))
        a = (t - self.t[j]) / (self.t[j + 1] - self.t[j])
        row = (1 - a) * self.u[j] + a * self.u[j + 1]
        return np.interp(x, self.x, row)

    def rows(self):
        """(x, t, u) triples, time-major."""
        for i, t in enumerate(self.t):
            for xv, uv in zip(self.x, self.u[i]):
                yield float(xv), float(t), float(uv)


# ---------------------------------------------------------------- CSBP ODE

def solve_csbp_ode(mech: BranchingMechanism, theta: float, T: float, dt: float = 1e-3, tol: float = 1e-12):
    """RK4 for du/dt = -psi(u), u(0) = theta.  Returns (t, u) on the grid k*dt.

    A step is rejected (and the step size halved, at most 20 times) when it
    produces a non-finite value or disagrees with two half steps by more
    than ``tol`` relative.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    if not mech.spatially_constant:
        raise UnsupportedError("the CSBP reduction needs a spatially constant mechanism")
    x0 = np.zeros(1)

    def rhs(u):
        return -mech.psi(x0, max(u, 0.0))

    def rk4(u, h):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * h * k1)
        k3 = rhs(u + 0.5 * h * k2)
        k4 = rhs(u + h * k3)
        return u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    n = int(round(T / dt))
    ts = np.linspace(0.0, n * dt, n + 1)
    us = np.empty(n + 1)
    us[0] = theta
    u = float(theta)
    for i in range(n):
        h = dt
        for _ in range(21):
            m = int(round(dt / h))
            full = u
            halves = u
            ok = True
            for _ in range(m):
                full = rk4(full, h)
                halves = rk4(rk4(halves, h / 2), h / 2)
                if not (np.isfinite(full) and np.isfinite(halves)):
                    ok = False
                    break
            if ok and abs(full - halves) <= tol * max(1.0, abs(halves)) * 16:
                break
            h /= 2
        else:
            raise NonConvergenceError("RK4 step rejected 20 times", residual=abs(full - halves))
        u = halves + (halves - full) / 15.0
        us[i + 1] = u
    return ts, us


# ---------------------------------------------------------------- spatial operators

def hat_gauss_matrix(x: np.ndarray, mean: np.ndarray, var: float) -> np.ndarray:
    """M[i, j] = E[l_j(Y_i)], Y_i ~ N(mean_i, var), for the hat basis on x with
    flat extension beyond the end nodes (rows sum to one)."""
    x = np.asarray(x, float)
    mean = np.asarray(mean, float)
    n = x.size
    s = np.sqrt(var)
    z = (x[None, :] - mean[:, None]) / s
    Phi = ndtr(z)
    phi = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    M = np.zeros((mean.size, n))
    h = np.diff(x)
    P = Phi[:, 1:] - Phi[:, :-1]
    EY = mean[:, None] * P + s * (phi[:, :-1] - phi[:, 1:])
    right = (EY - x[None, :-1] * P) / h  # E[(Y - x_j)/h 1{x_j<Y<x_j+1}]
    left = P - right
    M[:, :-1] += left
    M[:, 1:] += right
    M[:, 0] += Phi[:, 0]
    M[:, -1] += 1.0 - Phi[:, -1]
    return M


def gauss_nystrom_matrix(x: np.ndarray, mean: np.ndarray, var: float) -> np.ndarray:
    """Trapezoid-rule quadrature of the Gaussian kernel on a uniform grid.

    M[i, j] = w_j p(mean_i, var; x_j) with trapezoid weights; the Gaussian mass
    outside the grid is put on the end nodes (flat extension).  For smooth
    integrands this is spectrally accurate once the kernel width exceeds the
    grid spacing.
    """
    x = np.asarray(x, float)
    mean = np.asarray(mean, float)
    dx = np.diff(x)
    if not np.allclose(dx, dx[0]):
        raise ValueError("Nystrom quadrature needs a uniform grid")
    h = dx[0]
    s = np.sqrt(var)
    z = (x[None, :] - mean[:, None]) / s
    M = np.exp(-0.5 * z * z) / (s * np.sqrt(2 * np.pi)) * h
    M[:, 0] *= 0.5
    M[:, -1] *= 0.5
    M[:, 0] += ndtr(z[:, 0])
    M[:, -1] += ndtr(-z[:, -1])
    return M


def _hat_weights(x, y):
    """Sparse-as-dense interpolation weights of points y on the hat basis."""
    y = np.clip(y, x[0], x[-1])
    j = np.clip(np.searchsorted(x, y) - 1, 0, x.size - 2)
    a = (y - x[j]) / (x[j + 1] - x[j])
    W = np.zeros((y.size, x.size))
    np.add.at(W, (np.arange(y.size), j), 1 - a)
    np.add.at(W, (np.arange(y.size), j + 1), a)
    return W


def _transition_matrix(motion: MotionSpec, x, dt, rng, paths):
    """Hat-basis transition matrix of the motion over dt (killed paths drop out)."""
    if motion.kind == "ou" and motion.domain == "full":
        mean, var = ou_moments(motion.gamma, x, dt)
        if np.sqrt(var) >= 1.5 * (x[1] - x[0]):
            return gauss_nystrom_matrix(x, mean, var), 0.0
        return hat_gauss_matrix(x, mean, var), 0.0
    T = np.zeros((x.size, x.size))
    nsub = max(1, int(np.ceil(dt / motion.dt)))
    h = dt / nsub
    for i, x0 in enumerate(x):
        pts = np.full((paths, 1), x0)
        alive = np.ones(paths, bool)
        for _ in range(nsub):
            pts, alive = step_many(motion, pts, alive, h, rng)
        if alive.any():
            T[i] = _hat_weights(x, pts[alive, 0]).sum(axis=0) / paths
    # binomial noise scale of the row entries
    return T, float(np.sqrt(0.25 / paths))


def _default_grid(motion: MotionSpec, nx):
    if motion.domain == "interval":
        return np.linspace(0.0, 1.0, nx)
    half = 8.0
    return np.linspace(-half, half, nx)


# ---------------------------------------------------------------- solver

def _exp_weights(c, dt):
    """w0 = int_0^dt e^{cs}(1 - s/dt) ds, w1 = int_0^dt e^{cs} s/dt ds (elementwise in c)."""
    c = np.asarray(c, float)
    y = c * dt
    small = np.abs(y) < 1e-6
    ys = np.where(small, 1.0, y)
    e = np.exp(ys)
    w1 = np.where(small, dt * (0.5 + y / 6), dt * (e * (ys - 1) + 1) / (ys * ys))
    w0 = np.where(small, dt * (0.5 + y / 3), dt * (e - 1 - ys) / (ys * ys))
    return w0, w1


def _solve_once(mech, motion, f, g, x, T, dt, tol, max_iter, k, rng, paths, callback=None):
    nt = int(round(T / dt))
    ts = np.linspace(0.0, nt * dt, nt + 1)
    pts = x[:, None]
    beta = np.asarray(mech.beta(pts), float)
    fv = np.asarray(f(pts), float)
    P, noise = _transition_matrix(motion, x, dt, rng, paths)
    const_beta = bool(np.allclose(beta, beta[0]))
    c = beta - k
    # one step of e^{-k s} S_s: Strang splitting of the potential unless it is constant
    half = np.exp(0.5 * c * dt)
    Q = half[:, None] * P * half[None, :]
    w0, w1 = _exp_weights(c, dt)
    # the s = dt endpoint with the exponential factor taken out (R = P when beta is constant)
    R = np.exp(-c * dt)[:, None] * Q
    # first term e^{-kt} S_t f: exact Gaussian expectation where possible
    A = np.empty((nt + 1, x.size))
    A[0] = fv
    exact = const_beta and motion.kind == "ou" and motion.domain == "full" and isinstance(f, SpatialFunction)
    for n in range(1, nt + 1):
        val = None
        if exact:
            mean, var = ou_moments(motion.gamma, x, ts[n])
            vals = [f.gauss_expect(np.array([m]), var) for m in mean]
            if all(v is not None for v in vals):
                val = np.exp(c[0] * ts[n]) * np.array(vals, float)
        A[n] = val if val is not None else Q @ A[n - 1]
    G = None
    if g is not None:
        G = np.array([np.asarray(g(pts, t), float) for t in ts])

    u = np.zeros((nt + 1, x.size))
    resid = np.inf
    for it in range(1, max_iter + 1):
        h = k * u - mech.psi0_grid(pts, u.T).T
        if G is not None:
            h = h + G
        new = np.empty_like(u)
        new[0] = A[0]
        C = np.zeros(x.size)
        for n in range(nt):
            # int_0^dt e^{-ks} S_s h(t_{n+1} - s) ds, linear in s between the two nodes
            C = Q @ C + w0 * h[n + 1] + w1 * (R @ h[n])
            new[n + 1] = A[n + 1] + C
        resid = float(np.max(np.abs(new - u)))
        u = new
        if callback is not None:
            callback(it, u)
        if resid <= tol:
            break
    else:
        raise NonConvergenceError(f"Picard iteration did not reach {tol} in {max_iter} sweeps", residual=resid)
    return ts, u, it, resid, noise


def solve_mild(mech: BranchingMechanism, motion: MotionSpec, f, g=None, T: float = 1.0, dt: float = 0.01,
               x=None, nx: int = 400, tol: float = 1e-10, max_iter: int = 5000, richardson: bool = True,
               seed: int = 0, paths: int = 10_000, k: float | None = None, callback=None) -> MildSolution:
    """Nonnegative solution of the mild equation on a 1-d grid.

    ``g`` (optional) is a forcing g(points, t) >= 0.  With ``richardson`` the
    solution is computed at dt and dt/2 and extrapolated, removing the
    leading O(dt^2) term of the time quadrature.  ``callback(sweep, u)``
    sees every Picard iterate of the first (coarse) pass.
    """
    if motion.dim != 1:
        raise UnsupportedError("the grid solver is one-dimensional")
    f = as_function(f)
    x = _default_grid(motion, nx) if x is None else np.asarray(x, float)
    pts = x[:, None]
    fv = np.asarray(f(pts), float)
    if np.any(fv < 0) or not np.all(np.isfinite(fv)):
        raise ValueError("f must be bounded and nonnegative")
    beta = np.asarray(mech.beta(pts), float)
    bbar = float(np.max(beta))
    M = max(np.exp(bbar * T), 1.0)
    gsup = 0.0
    if g is not None:
        gsup = max(float(np.max(np.asarray(g(pts, t), float))) for t in np.linspace(0, T, 11))
    c = M * float(np.max(fv)) + M * T * gsup
    lip = mech.lipschitz(pts, c) if c > 0 else 0.0
    k = 1.1 * lip if k is None else float(k)
    rng = np.random.default_rng(seed)
    ts, u, it, resid, noise = _solve_once(mech, motion, f, g, x, T, dt, tol, max_iter, k, rng, paths, callback)
    meta = {"dt": dt, "richardson": False, "mc_noise": noise, "L(c)": lip, "c": c}
    if richardson:
        rng = np.random.default_rng(seed)
        ts2, u2, it2, resid2, _ = _solve_once(mech, motion, f, g, x, T, dt / 2, tol, max_iter, k, rng, paths)
        fine = u2[::2]
        meta["richardson_change"] = float(np.max(np.abs(fine - u)))
        u = (4 * fine - u) / 3
        u[0] = fv
        np.maximum(u, 0.0, out=u)
        it = max(it, it2)
        resid = max(resid, resid2)
        meta["richardson"] = True
    bound = float(np.exp(bbar * T) * np.max(fv) + (np.expm1(bbar * T) / bbar if bbar != 0 else T) * gsup)
    return MildSolution(x=x, t=ts, u=u, iterations=it, residual=resid, k=k, bound=bound, meta=meta)


def laplace_functional(sol: MildSolution, mu, t=None) -> float:
    """exp(-<u_f(., t), mu>) for a discrete measure mu = [(position, mass), ...]."""
    total = 0.0
    for pos, mass in mu:
        p = as_points(pos)
        if p.size != 1:
            raise UnsupportedError("one-dimensional solutions only")
        total += float(mass) * float(sol.at(p[0], t)[0])
    return float(np.exp(-total))
