"""Branching mechanisms, the skeleton offspring law and the star transform.

A mechanism is the triple (beta, alpha, Pi) with

    psi_beta(x, z) = -beta(x) z + alpha(x) z^2 + int (e^{-yz} - 1 + yz) Pi(x, dy)

and psi_0 the same expression without the linear term.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import warnings

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc, gammaln

from .errors import DegenerateSiteError, NumericalIntegrationError, UnboundedRootError
from .functions import Profile, SpatialFunction, as_function, as_points, const

__all__ = [
    "LevyKernel",
    "BranchingMechanism",
    "OffspringLaw",
    "StarMechanism",
    "psi_eval",
    "skeleton_offspring",
    "star_transform",
    "csbp_root",
    "grey_check",
    "small_yz_kernel",
]

QUAD_RTOL = 1e-10


def small_yz_kernel(v):
    """e^{-v} - 1 + v without cancellation for small v."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    small = np.abs(v) < 1e-3
    s = v[small]
    out[small] = s * s * (0.5 - s * (1 / 6 - s * (1 / 24 - s / 120)))
    b = v[~small]
    out[~small] = np.expm1(-b) + b
    return out


def _scalar_point(x):
    p = as_points(x)
    if p.ndim != 1:
        raise ValueError("expected a single point")
    return p


@dataclass(frozen=True)
class LevyKernel:
    """Jump kernel Pi(x, dy) built from a base measure Pi0 on (0, inf).

    Pi(x, A) = e^{-tilt(x) y} mod(x) (1/s(x)) Pi0(A / s(x)), where Pi0 is

    * ``zero``: the null measure;
    * ``tempered``: c u^{-1-a} e^{-b u} du, a in (0,1) or (1,2), b >= 0
      (b = 0 only for a in (1,2));
    * ``atoms``: sum_i weights_i delta_{sizes_i}.

    The size scale s(x) is what an h-transform changes; ``tilt`` is what the
    star transform adds.
    """

    family: str = "zero"
    a: float = 0.5
    b: float = 1.0
    c: float = 1.0
    sizes: tuple = ()
    weights: tuple = ()
    modulation: SpatialFunction = field(default_factory=lambda: const(1.0))
    size: SpatialFunction = field(default_factory=lambda: const(1.0))
    tilt: SpatialFunction | None = None

    def __post_init__(self):
        if self.family not in ("zero", "tempered", "atoms"):
            raise ValueError(f"unknown Levy family {self.family!r}")
        if self.family == "tempered":
            if not (0 < self.a < 2) or self.a == 1:
                raise ValueError("tempered family needs a in (0,1) or (1,2)")
            if self.b < 0 or (self.b == 0 and self.a < 1):
                raise ValueError("b = 0 requires a in (1,2) for a finite first moment at infinity")
        object.__setattr__(self, "modulation", as_function(self.modulation))
        object.__setattr__(self, "size", as_function(self.size))
        if self.tilt is not None:
            object.__setattr__(self, "tilt", as_function(self.tilt))

    @classmethod
    def zero(cls):
        return cls("zero")

    @property
    def is_zero(self) -> bool:
        return self.family == "zero" or self.c == 0 or (self.family == "atoms" and not self.sizes)

    @property
    def spatially_constant(self) -> bool:
        parts = [self.modulation, self.size] + ([self.tilt] if self.tilt is not None else [])
        return all(p.is_constant for p in parts)

    def local(self, x):
        """(prefactor, scale, effective base b) at the point x."""
        x = _scalar_point(x)
        mod = float(self.modulation(x))
        s = float(self.size(x))
        t = 0.0 if self.tilt is None else float(self.tilt(x))
        return mod, s, t

    # ---- generic quadrature ----
    def integrate(self, x, g, split=1.0) -> float:
        """int g(y) Pi(x, dy) by adaptive quadrature (exact sums for atoms)."""
        if self.is_zero:
            return 0.0
        mod, s, t = self.local(x)
        if self.family == "atoms":
            ys = s * np.asarray(self.sizes, float)
            ws = np.asarray(self.weights, float) / s
            return float(mod * np.sum(ws * np.exp(-t * ys) * g(ys)))
        a, c = self.a, self.c
        be = self.b + t * s

        def f(u):
            return g(s * u) * u ** (-1.0 - a) * np.exp(-be * u)

        pts = sorted({split, 1.0})
        total, err = 0.0, 0.0
        edges = [0.0] + pts + [np.inf]
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, e = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=QUAD_RTOL, limit=400)
            total += val
            err += e
        if not np.isfinite(total) or err > 1e-6 * max(abs(total), 1e-12):
            raise NumericalIntegrationError("Levy-kernel quadrature did not converge", err)
        return float(mod * c / s * total)

    # ---- closed forms for the tempered family ----
    def _tempered_terms(self, x):
        mod, s, t = self.local(x)
        return mod, s, self.b + t * s

    def psi_part(self, x, z) -> float:
        """int (e^{-yz}-1+yz) Pi(x,dy), closed form where available."""
        if self.is_zero or z == 0:
            return 0.0
        if self.family == "tempered":
            mod, s, be = self._tempered_terms(x)
            zeta = z * s
            a, c = self.a, self.c
            if be == 0:
                val = c * gamma_fn(-a) * zeta**a
            else:
                val = c * gamma_fn(-a) * (
                    be**a * np.expm1(a * np.log1p(zeta / be)) - a * zeta * be ** (a - 1)
                )
            return float(mod / s * val)
        return self.integrate(x, lambda y: small_yz_kernel(y * z))

    def dpsi_part(self, x, z) -> float:
        """d/dz of psi_part: int y (1 - e^{-yz}) Pi(x,dy)."""
        if self.is_zero or z == 0:
            return 0.0
        if self.family == "tempered":
            mod, s, be = self._tempered_terms(x)
            zeta = z * s
            a, c = self.a, self.c
            if be == 0:
                val = -c * gamma_fn(1 - a) * zeta ** (a - 1)
            else:
                val = -c * gamma_fn(1 - a) * be ** (a - 1) * np.expm1((a - 1) * np.log1p(zeta / be))
            return float(mod * val)
        return self.integrate(x, lambda y: -y * np.expm1(-y * z))

    def moment(self, x, k, weight_rate=0.0) -> float:
        """int y^k e^{-weight_rate y} Pi(x, dy)."""
        if self.is_zero:
            return 0.0
        if self.family == "tempered":
            mod, s, be = self._tempered_terms(x)
            be = be + weight_rate * s
            if k - self.a <= 0 or (be == 0):
                return np.inf
            logv = np.log(self.c) + (k - 1) * np.log(s) + gammaln(k - self.a) - (k - self.a) * np.log(be)
            return float(mod * np.exp(logv))
        return self.integrate(x, lambda y: y**k * np.exp(-weight_rate * y))

    def restricted_moment(self, x, k, lo=0.0, hi=np.inf) -> float:
        """int_{(lo, hi]} y^k Pi(x, dy), possibly infinite."""
        if self.is_zero:
            return 0.0
        mod, s, t = self.local(x)
        if self.family == "atoms":
            ys = s * np.asarray(self.sizes, float)
            ws = np.asarray(self.weights, float) / s
            sel = (ys > lo) & (ys <= hi)
            return float(mod * np.sum(ws[sel] * np.exp(-t * ys[sel]) * ys[sel] ** k))
        be = self.b + t * s
        # divergence at 0 or infinity
        if lo == 0 and k - self.a <= 0:
            return np.inf
        if hi == np.inf and be == 0 and k - self.a >= 0:
            return np.inf
        ulo, uhi = lo / s, hi / s
        f = lambda u: u ** (k - 1.0 - self.a) * np.exp(-be * u)  # noqa: E731
        edges = [ulo] + [p for p in (1.0,) if ulo < p < uhi] + [uhi]
        total = 0.0
        for e0, e1 in zip(edges[:-1], edges[1:]):
            v, _ = integrate.quad(f, e0, e1, epsabs=0.0, epsrel=QUAD_RTOL, limit=400)
            total += v
        return float(mod * self.c * s ** (k - 1) * total)

    def poisson_tail(self, x, w, K, power=0) -> float:
        """int e^{-wy} sum_{k>K} k^power (wy)^k/k! Pi(x,dy) for power in {0,1}."""
        if self.is_zero:
            return 0.0
        if power == 0:
            g = lambda y: gammainc(K + 1, w * y)  # noqa: E731
        else:
            g = lambda y: w * y * gammainc(K, w * y)  # noqa: E731
        return self.integrate(x, g, split=max(K / max(w, 1e-300), 1.0))

    def tilted(self, w: SpatialFunction) -> "LevyKernel":
        w = as_function(w)
        if self.tilt is None:
            new_tilt = w
        elif isinstance(self.tilt, Profile) and isinstance(w, Profile):
            new_tilt = self.tilt + w
        else:
            old = self.tilt
            new_tilt = as_function(lambda x: old(x) + w(x))
        return replace(self, tilt=new_tilt)

    def rescaled(self, h: SpatialFunction) -> "LevyKernel":
        """(1/h) Pi(x, dy/h): multiplies the size scale by h."""
        if self.is_zero:
            return self
        h = as_function(h)
        size = self.size * h if isinstance(self.size, Profile) and isinstance(h, Profile) else as_function(
            lambda x, s0=self.size: s0(x) * h(x)
        )
        tilt = self.tilt
        if tilt is not None:
            # e^{-t y} with y = h y' -> tilt per unit of the new variable is t/h
            tilt = as_function(lambda x, t0=self.tilt: t0(x) / h(x))
        return replace(self, size=size, tilt=tilt)

    def describe(self) -> dict:
        d = {"family": self.family}
        if self.family == "tempered":
            d.update(a=self.a, b=self.b, c=self.c)
        elif self.family == "atoms":
            d.update(sizes=list(self.sizes), weights=list(self.weights))
        return d


@dataclass(frozen=True)
class BranchingMechanism:
    beta: SpatialFunction
    alpha: SpatialFunction
    pi: LevyKernel = field(default_factory=LevyKernel.zero)

    def __post_init__(self):
        object.__setattr__(self, "beta", as_function(self.beta))
        object.__setattr__(self, "alpha", as_function(self.alpha))

    @property
    def spatially_constant(self) -> bool:
        return self.beta.is_constant and self.alpha.is_constant and (
            self.pi.is_zero or self.pi.spatially_constant
        )

    def psi0(self, x, z) -> float:
        x = _scalar_point(x)
        return float(self.alpha(x)) * z * z + self.pi.psi_part(x, z)

    def psi(self, x, z) -> float:
        x = _scalar_point(x)
        return -float(self.beta(x)) * z + self.psi0(x, z)

    def dpsi0(self, x, z) -> float:
        x = _scalar_point(x)
        return 2.0 * float(self.alpha(x)) * z + self.pi.dpsi_part(x, z)

    def psi0_grid(self, xs, z):
        """Vectorised psi_0 on an array of points xs (n, d) and values z (n, ...)."""
        xs = as_points(xs)
        z = np.asarray(z, dtype=float)
        al = self.alpha(xs).reshape((-1,) + (1,) * (z.ndim - 1))
        out = al * z * z
        if not self.pi.is_zero:
            if self.pi.spatially_constant and self.pi.family == "tempered":
                x0 = xs[0]
                mod, s, be = self.pi._tempered_terms(x0)
                zeta = z * s
                a, c = self.pi.a, self.pi.c
                if be == 0:
                    part = c * gamma_fn(-a) * zeta**a
                else:
                    part = c * gamma_fn(-a) * (be**a * np.expm1(a * np.log1p(zeta / be)) - a * zeta * be ** (a - 1))
                out = out + mod / s * part
            else:
                flat = z.reshape(len(xs), -1)
                extra = np.array([[self.pi.psi_part(xs[i], v) for v in flat[i]] for i in range(len(xs))])
                out = out + extra.reshape(z.shape)
        return out

    def lipschitz(self, xs, c) -> float:
        """sup over grid of d/dz psi_0(x, c)."""
        xs = as_points(xs)
        return float(max(self.dpsi0(x, c) for x in xs))


@dataclass(frozen=True)
class OffspringLaw:
    q: float
    pk: np.ndarray  # p_2 .. p_K
    tail: float
    K: int
    tail_mean: float = 0.0
    zero_mass_weight: float = 0.0  # P(Y_u = 0 | k = 2)
    tail_ratio: float = 0.0

    @property
    def ks(self):
        return np.arange(2, self.K + 1)

    @property
    def total(self):
        return float(self.pk.sum() + self.tail)

    @property
    def mean(self):
        return float(np.dot(self.ks, self.pk) + self.tail_mean)

    def generator(self, s):
        """q * sum_k p_k (s^k - s), truncated at K (tail ignored)."""
        s = np.asarray(s, dtype=float)
        return self.q * np.sum(self.pk * (s[..., None] ** self.ks - s[..., None]), axis=-1)


def psi_eval(mech: BranchingMechanism, x, z: float) -> float:
    """psi_beta(x, z) with the jump integral by adaptive quadrature."""
    if z < 0:
        raise ValueError("z must be nonnegative")
    x = _scalar_point(x)
    val = -float(mech.beta(x)) * z + float(mech.alpha(x)) * z * z
    if not mech.pi.is_zero and z > 0:
        val += mech.pi.integrate(x, lambda y: small_yz_kernel(y * z), split=1.0 / z)
    return float(val)


def skeleton_offspring(mech: BranchingMechanism, w, x, K: int = 64) -> OffspringLaw:
    x = _scalar_point(x)
    w = as_function(w)
    wx = float(w(x))
    if not wx > 0:
        raise DegenerateSiteError(f"w(x) = {wx} is not positive")
    psi0w = mech.psi0(x, wx)
    q = mech.dpsi0(x, wx) - psi0w / wx
    if not q > 0:
        raise DegenerateSiteError(f"branching rate q = {q} <= 0 at x = {x}")
    al = float(mech.alpha(x))
    ks = np.arange(2, K + 1)
    pk = np.zeros(len(ks))
    pk[0] = al * wx * wx
    pi = mech.pi
    if not pi.is_zero:
        if pi.family == "tempered":
            mod, s, be = pi._tempered_terms(x)
            be_w = be + wx * s
            logt = (
                np.log(pi.c) + ks * np.log(wx) + (ks - 1) * np.log(s) + gammaln(ks - pi.a)
                - gammaln(ks + 1) - (ks - pi.a) * np.log(be_w)
            )
            pk += mod * np.exp(logt)
        else:
            pk += np.array([pi.integrate(x, lambda y, k=k: np.exp(k * np.log(wx * y) - gammaln(k + 1) - wx * y)) for k in ks])
    zero_w = pk[0] and al * wx * wx / pk[0]
    pk = pk / (q * wx)
    tail = pi.poisson_tail(x, wx, K) / (q * wx) if not pi.is_zero else 0.0
    tail_mean = pi.poisson_tail(x, wx, K, power=1) / (q * wx) if not pi.is_zero else 0.0
    ratio = float(pk[-1] / pk[-2]) if len(pk) > 1 and pk[-2] > 0 else 0.0
    return OffspringLaw(q=float(q), pk=pk, tail=float(tail), K=K, tail_mean=float(tail_mean),
                        zero_mass_weight=float(zero_w), tail_ratio=min(ratio, 1 - 1e-12))


@dataclass(frozen=True)
class StarMechanism:
    beta_star: SpatialFunction
    alpha: SpatialFunction
    pi_star: LevyKernel
    w: SpatialFunction

    def as_mechanism(self) -> BranchingMechanism:
        return BranchingMechanism(self.beta_star, self.alpha, self.pi_star)


def star_transform(mech: BranchingMechanism, w) -> StarMechanism:
    w = as_function(w)
    pi = mech.pi
    if pi.is_zero:
        tilt_part = None
    elif pi.spatially_constant and w.is_constant:
        x0 = np.zeros(1)
        tilt_part = pi.dpsi_part(x0, float(w(x0)))
        tilt_part = pi.modulation * (tilt_part / float(pi.modulation(x0))) if isinstance(pi.modulation, Profile) else const(tilt_part)
    else:
        tilt_part = as_function(lambda xs: np.array([pi.dpsi_part(p, float(w(p))) for p in as_points(xs).reshape(-1, as_points(xs).shape[-1])]).reshape(as_points(xs).shape[:-1]))
    two_aw = mech.alpha * w * 2.0
    if all(isinstance(f, Profile) for f in (mech.beta, two_aw)) and (tilt_part is None or isinstance(tilt_part, Profile)):
        bs = mech.beta - two_aw - (tilt_part if tilt_part is not None else 0.0)
    else:
        beta, tp = mech.beta, tilt_part
        bs = as_function(lambda xs: beta(xs) - two_aw(xs) - (tp(xs) if tp is not None else 0.0))
    return StarMechanism(beta_star=bs, alpha=mech.alpha, pi_star=pi.tilted(w) if not pi.is_zero else pi, w=w)


def csbp_root(mech: BranchingMechanism, tol: float = 1e-12, maxit: int = 200):
    """z* = sup{z >= 0 : psi(z) <= 0}; None if it is 0 or psi stays bounded."""
    if not mech.spatially_constant:
        raise ValueError("csbp_root needs a spatially constant mechanism")
    x0 = np.zeros(1)
    beta = float(mech.beta(x0))
    if beta <= 0:
        return None
    if mech.pi.is_zero and float(mech.alpha(x0)) > 0:
        return beta / float(mech.alpha(x0))
    psi = lambda z: mech.psi(x0, z)  # noqa: E731
    hi = 1.0
    for _ in range(61):
        if psi(hi) > 0:
            break
        hi *= 2.0
    else:
        if float(mech.alpha(x0)) == 0 and mech.pi.is_zero:
            return None
        raise UnboundedRootError("no sign change of psi below 2^60")
    lo = 0.0
    # lo must be inside {psi <= 0}; psi < 0 just right of 0 since beta > 0
    for _ in range(maxit):
        mid = 0.5 * (lo + hi)
        if psi(mid) <= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


def grey_check(mech: BranchingMechanism) -> bool:
    """psi(inf) = inf and int^inf dz/psi(z) < inf (numerical, with power-law tail fit)."""
    x0 = np.zeros(1)
    zs = csbp_root(mech)
    if zs is None:
        zs = 0.0
    psi = lambda z: mech.psi(x0, z)  # noqa: E731
    big = 1e8 * max(1.0, zs)
    if not psi(big) > 0 or not psi(big) > psi(big / 2):
        return False
    r = np.log(psi(big) / psi(big / 2)) / np.log(2.0)
    if r <= 1.02:
        return False
    with warnings.catch_warnings():
        # slow convergence near the Grey boundary is expected; the tail fit decides
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda z: 1.0 / psi(z), zs + 1.0, big, limit=400)
    tail = big / ((r - 1.0) * psi(big))
    return bool(np.isfinite(val + tail))
