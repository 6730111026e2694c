"""Spatial functions used for rates, eigenfunctions and test functions.

Points are arrays whose last axis holds coordinates; a bare float is a
point in one dimension.  Evaluation on a 1-d grid therefore takes
``grid[:, None]``.

The workhorse is :class:`Profile`, a finite sum of radial terms
``(c0 + c1 r + c2 r^2) exp(k r)`` with ``r = |x|^2``.  Sums and products of
such terms stay in the family, which keeps every rate of the OU catalog
cards (and their h-transforms) in a form the compiled engine understands.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

__all__ = [
    "SpatialFunction",
    "Profile",
    "Poly1D",
    "Indicator",
    "Callable1",
    "as_points",
    "as_function",
    "const",
    "gaussian",
]


def as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return x


class SpatialFunction:
    """Base class.  Subclasses implement ``__call__`` and optionally
    ``grad`` / ``hess`` (analytic) and ``gauss_expect``."""

    name = "function"

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError(f"{self.name}: no analytic gradient")

    def hess(self, x) -> np.ndarray:
        raise NotImplementedError(f"{self.name}: no analytic Hessian")

    def laplacian(self, x) -> np.ndarray:
        return np.trace(self.hess(x), axis1=-2, axis2=-1)

    def gauss_expect(self, mean, var) -> float | None:
        """E[f(Y)] for Y ~ N(mean, var I), or None if no closed form."""
        return None

    @property
    def is_constant(self) -> bool:
        return False

    def __mul__(self, other):
        return _Product(self, as_function(other))

    __rmul__ = __mul__


def _radius2(x):
    x = as_points(x)
    return np.sum(x * x, axis=-1)


@dataclass(frozen=True)
class Profile(SpatialFunction):
    """Sum of radial terms; ``terms`` rows are ``(c0, c1, c2, k)``."""

    terms: tuple = ((0.0, 0.0, 0.0, 0.0),)
    name: str = "profile"

    def __post_init__(self):
        t = tuple(tuple(float(v) for v in row) for row in self.terms)
        if not t:
            t = ((0.0, 0.0, 0.0, 0.0),)
        object.__setattr__(self, "terms", t)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.terms, dtype=float).reshape(-1, 4)

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for c0, c1, c2, k in self.terms:
            out = out + (c0 + c1 * r + c2 * r * r) * np.exp(k * r)
        return out

    def radial_d1(self, r):
        """d/dr of the radial profile."""
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for c0, c1, c2, k in self.terms:
            poly = c0 + c1 * r + c2 * r * r
            out = out + (c1 + 2 * c2 * r + k * poly) * np.exp(k * r)
        return out

    def radial_d2(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        for c0, c1, c2, k in self.terms:
            poly = c0 + c1 * r + c2 * r * r
            dpoly = c1 + 2 * c2 * r
            out = out + (2 * c2 + 2 * k * dpoly + k * k * poly) * np.exp(k * r)
        return out

    def __call__(self, x):
        return self.radial(_radius2(x))

    def grad(self, x):
        x = as_points(x)
        g1 = self.radial_d1(_radius2(x))
        return 2.0 * g1[..., None] * x

    def hess(self, x):
        x = as_points(x)
        r = _radius2(x)
        g1 = self.radial_d1(r)
        g2 = self.radial_d2(r)
        d = x.shape[-1]
        eye = np.eye(d)
        outer = x[..., :, None] * x[..., None, :]
        return 2.0 * g1[..., None, None] * eye + 4.0 * g2[..., None, None] * outer

    def gauss_expect(self, mean, var):
        mean = as_points(mean)
        if var <= 0:
            return float(self(mean))
        total = 0.0
        for c0, c1, c2, k in self.terms:
            if c1 != 0.0 or c2 != 0.0:
                return None
            s = 1.0 - 2.0 * k * var
            if s <= 0:
                return None
            total += c0 * float(np.prod(s ** -0.5 * np.exp(k * mean**2 / s)))
        return total

    @property
    def is_constant(self) -> bool:
        return all(c1 == 0 and c2 == 0 and (k == 0 or c0 == 0) for c0, c1, c2, k in self.terms)

    @property
    def single_exponential(self) -> tuple[float, float] | None:
        """(C, k) if the profile is exactly C exp(k r), else None."""
        nz = [t for t in self.terms if any(v != 0 for v in t[:3])]
        if len(nz) != 1:
            return (0.0, 0.0) if not nz else None
        c0, c1, c2, k = nz[0]
        if c1 != 0 or c2 != 0:
            return None
        return c0, k

    def simplify(self) -> "Profile":
        acc: dict[float, np.ndarray] = {}
        for c0, c1, c2, k in self.terms:
            acc.setdefault(k, np.zeros(3))
            acc[k] += (c0, c1, c2)
        rows = tuple((*v, k) for k, v in sorted(acc.items()) if np.any(v != 0))
        return Profile(rows or ((0.0, 0.0, 0.0, 0.0),), self.name)

    def __add__(self, other):
        if np.isscalar(other):
            other = const(other)
        if isinstance(other, Profile):
            return Profile(self.terms + other.terms, self.name).simplify()
        return NotImplemented

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        if np.isscalar(other):
            other = const(other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            rows = tuple((c0 * other, c1 * other, c2 * other, k) for c0, c1, c2, k in self.terms)
            return Profile(rows, self.name).simplify()
        if isinstance(other, Profile):
            rows = []
            for a0, a1, a2, ka in self.terms:
                for b0, b1, b2, kb in other.terms:
                    p = np.polynomial.polynomial.polymul((a0, a1, a2), (b0, b1, b2))
                    p = np.concatenate([p, np.zeros(5)])[:5]
                    if abs(p[3]) > 0 or abs(p[4]) > 0:
                        raise ValueError("profile product exceeds degree 2 in |x|^2")
                    rows.append((p[0], p[1], p[2], ka + kb))
            return Profile(tuple(rows), self.name).simplify()
        return SpatialFunction.__mul__(self, other)

    __rmul__ = __mul__

    def reciprocal(self) -> "Profile":
        se = self.single_exponential
        if se is None or se[0] == 0:
            raise ValueError("only C exp(k r) profiles have a profile reciprocal")
        return Profile(((1.0 / se[0], 0.0, 0.0, -se[1]),), self.name)

    def __truediv__(self, other):
        if np.isscalar(other):
            return self * (1.0 / other)
        if isinstance(other, Profile):
            return self * other.reciprocal()
        return NotImplemented


def const(c: float, name: str = "const") -> Profile:
    return Profile(((float(c), 0.0, 0.0, 0.0),), name)


def gaussian(amp: float, k: float, name: str = "gaussian") -> Profile:
    """amp * exp(k |x|^2); negative k gives a bump."""
    return Profile(((float(amp), 0.0, 0.0, float(k)),), name)


@dataclass(frozen=True)
class Poly1D(SpatialFunction):
    """Polynomial in the single coordinate (ascending coefficients)."""

    coef: tuple = (0.0,)
    name: str = "poly"

    def _p(self, order=0):
        p = np.polynomial.Polynomial(self.coef)
        return p.deriv(order) if order else p

    def __call__(self, x):
        x = as_points(x)
        return self._p()(x[..., 0])

    def grad(self, x):
        x = as_points(x)
        return self._p(1)(x[..., 0])[..., None]

    def hess(self, x):
        x = as_points(x)
        return self._p(2)(x[..., 0])[..., None, None]

    @property
    def is_constant(self) -> bool:
        return all(c == 0 for c in self.coef[1:])


@dataclass(frozen=True)
class Indicator(SpatialFunction):
    """Indicator of the box [lo, hi]^d."""

    lo: float = -1.0
    hi: float = 1.0
    name: str = "indicator"

    def __call__(self, x):
        x = as_points(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1).astype(float)

    def gauss_expect(self, mean, var):
        mean = as_points(mean)
        if var <= 0:
            return float(self(mean))
        s = np.sqrt(var)
        return float(np.prod(ndtr((self.hi - mean) / s) - ndtr((self.lo - mean) / s)))

    def grad(self, x):
        x = as_points(x)
        return np.zeros_like(x)

    def hess(self, x):
        x = as_points(x)
        return np.zeros(x.shape + (x.shape[-1],))


@dataclass(frozen=True)
class Callable1(SpatialFunction):
    """Wraps an arbitrary vectorised callable (no derivatives)."""

    fn: Callable = field(default=lambda x: 0.0 * as_points(x)[..., 0])
    name: str = "callable"

    def __call__(self, x):
        return np.asarray(self.fn(as_points(x)), dtype=float)


@dataclass(frozen=True)
class _Product(SpatialFunction):
    a: SpatialFunction = None
    b: SpatialFunction = None
    name: str = "product"

    def __call__(self, x):
        return self.a(x) * self.b(x)

    def grad(self, x):
        return self.a.grad(x) * self.b(x)[..., None] + self.b.grad(x) * self.a(x)[..., None]


def as_function(v) -> SpatialFunction:
    if isinstance(v, SpatialFunction):
        return v
    if np.isscalar(v):
        return const(v)
    if callable(v):
        return Callable1(v)
    raise TypeError(f"cannot interpret {v!r} as a spatial function")
