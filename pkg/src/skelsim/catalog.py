"""Worked examples with closed-form eigendata and assumption validators."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.special import log_ndtr

from .errors import UnsupportedError
from .functions import Callable1, Indicator, Poly1D, Profile, SpatialFunction, as_points, const, gaussian
from .mechanism import BranchingMechanism, LevyKernel, csbp_root
from .motion import MotionSpec, h_transform, ou_moments
from .reports import RunReport

__all__ = [
    "EigenData",
    "ExampleCard",
    "eigendata",
    "martingale_function",
    "validate_assumptions",
    "check_slln_skeleton_conditions",
    "get_card",
    "card_names",
    "CARDS",
]


@dataclass(frozen=True)
class EigenData:
    lambda_c: float
    phi: SpatialFunction
    phi_tilde: SpatialFunction
    w: SpatialFunction | None
    w_envelope: tuple | None = None  # (lower factor, upper factor) times w
    note: str = "<phi, phi_tilde> = 1"


@dataclass(frozen=True)
class ExampleCard:
    name: str
    motion: MotionSpec
    mech: BranchingMechanism
    eigen: EigenData
    a_fn: Callable | None = None
    K: float = 1.0
    p: float = 2.0
    delta: float = 0.5
    slln_eps: float = 0.1
    ergodic_horizon: float = 30.0
    partial: bool = False
    params: dict = field(default_factory=dict)
    description: str = ""

    @cached_property
    def _spine(self):
        return h_transform(self.motion, self.mech, self.eigen.phi)

    def spine_motion(self) -> MotionSpec:
        return self._spine[0]

    def skeleton_motion(self) -> MotionSpec:
        if self.eigen.w is None:
            raise UnsupportedError(f"{self.name}: martingale function not available in closed form")
        return h_transform(self.motion, self.mech, self.eigen.w)[0]

    @property
    def lam(self) -> float:
        return self.eigen.lambda_c

    @property
    def w(self):
        if self.eigen.w is None:
            raise UnsupportedError(f"{self.name}: martingale function not available in closed form")
        return self.eigen.w

    @cached_property
    def density(self) -> SpatialFunction:
        """phi * phi_tilde, combined analytically when both are profiles."""
        return self.eigen.phi * self.eigen.phi_tilde

    def stationary_density(self, x):
        return self.density(x)

    def stationary_expectation(self, g) -> float:
        """<g, phi phi_tilde> (one-dimensional quadrature)."""
        if self.motion.dim != 1:
            raise UnsupportedError("stationary quadrature implemented for d = 1")
        f = lambda y: float(np.asarray(g(np.array([y]))).ravel()[0]) * float(np.ravel(self.stationary_density(np.array([y])))[0])  # noqa: E731
        if self.motion.domain == "interval":
            val, _ = integrate.quad(f, 0.0, 1.0, limit=400, epsabs=1e-13, epsrel=1e-11)
        else:
            val, _ = integrate.quad(f, -np.inf, np.inf, limit=400, epsabs=1e-13, epsrel=1e-11)
        return val

    def summary(self) -> dict:
        e = self.eigen
        return {
            "name": self.name,
            "description": self.description,
            "motion": self.motion.exact_tag if self.motion.kind == "ou" else self.motion.label or self.motion.kind,
            "gamma": self.motion.gamma if self.motion.kind == "ou" else "",
            "dim": self.motion.dim,
            "lambda_c": e.lambda_c,
            "p": self.p,
            "K": self.K,
            "delta": self.delta,
            "w": "closed form" if e.w is not None else "unavailable",
            "partial": self.partial,
            **{f"param.{k}": v for k, v in self.params.items()},
        }


# ---------------------------------------------------------------- builders

def _gauss_density(gamma, d):
    return gaussian((gamma / np.pi) ** (d / 2), -gamma, "gauss")


def inward_ou(gamma=1.0, beta=1.0, alpha=1.0, d=1, pi: LevyKernel | None = None, p=2.0, delta=0.5,
              name="inward-ou-quadratic", description="") -> ExampleCard:
    mech = BranchingMechanism(const(beta), const(alpha), pi or LevyKernel.zero())
    zs = csbp_root(mech)
    eig = EigenData(lambda_c=beta, phi=const(1.0, "one"), phi_tilde=_gauss_density(gamma, d), w=const(zs, "w"))
    lam = beta
    return ExampleCard(
        name=name, motion=MotionSpec("ou", dim=d, gamma=gamma), mech=mech, eigen=eig,
        a_fn=lambda t: np.sqrt((lam / gamma + delta) * t), K=1.0, p=p, delta=delta,
        slln_eps=gamma * delta / 2,
        params=dict(gamma=gamma, beta=beta, alpha=alpha, dim=d, **({"pi": pi.describe()} if pi else {})),
        description=description or "inward OU motion, spatially constant mechanism",
    )


def outward_ou(gamma=1.0, beta=2.0, alpha=1.0, d=1, delta=0.5, name="outward-ou-quadratic") -> ExampleCard:
    if not beta > gamma * d:
        raise ValueError("outward OU needs beta > gamma d")
    mech = BranchingMechanism(const(beta), const(alpha))
    zs = csbp_root(mech)
    eig = EigenData(lambda_c=beta - gamma * d, phi=_gauss_density(gamma, d), phi_tilde=const(1.0, "one"), w=const(zs, "w"))
    return ExampleCard(
        name=name, motion=MotionSpec("ou", dim=d, gamma=-gamma), mech=mech, eigen=eig,
        a_fn=lambda t: np.exp(gamma * (1 + delta) * t), K=1 + 2 * delta, p=2.0, delta=delta, slln_eps=0.1,
        params=dict(gamma=gamma, beta=beta, alpha=alpha, dim=d),
        description="outward OU motion, quadratic constant mechanism",
    )


def unbounded_w(gamma=1.0, beta=1.0, d=1, delta=0.5, name="unbounded-w") -> ExampleCard:
    mech = BranchingMechanism(const(beta), gaussian(1.0, -gamma, "alpha"))
    w = gaussian(beta + gamma * d, gamma, "w")
    eig = EigenData(lambda_c=beta, phi=const(1.0, "one"), phi_tilde=_gauss_density(gamma, d), w=w)
    return ExampleCard(
        name=name, motion=MotionSpec("ou", dim=d, gamma=gamma), mech=mech, eigen=eig,
        a_fn=lambda t: np.exp(gamma * (1 + delta) * t), K=1 + 2 * delta, p=2.0, delta=delta, slln_eps=0.1,
        params=dict(gamma=gamma, beta=beta, dim=d),
        description="inward OU, alpha = exp(-gamma|x|^2), unbounded martingale function",
    )


def unbounded_beta(gamma=1.0, c1=0.375, c2=0.5, c_alpha=1.0, d=1, delta=0.5, name="unbounded-beta") -> ExampleCard:
    if not gamma > np.sqrt(2 * c1):
        raise ValueError("need gamma > sqrt(2 c1)")
    th = 0.5 * (gamma - np.sqrt(gamma**2 - 2 * c1))
    lam = c2 + d * th
    beta = Profile(((c2, c1, 0.0, 0.0),), "beta")
    alpha = gaussian(c_alpha, -th, "alpha")
    mech = BranchingMechanism(beta, alpha)
    phi = gaussian(1.0, th, "phi")
    phit = gaussian(((gamma - 2 * th) / np.pi) ** (d / 2), th - gamma, "phi_tilde")
    # alpha phi = c_alpha exactly, so the transformed mechanism is constant and w = (lam / c_alpha) phi
    w = gaussian(lam / c_alpha, th, "w")
    eig = EigenData(lambda_c=lam, phi=phi, phi_tilde=phit, w=w, w_envelope=(1.0, 1.0),
                    note="alpha phi constant, so the envelope collapses")
    gs = gamma - 2 * th
    return ExampleCard(
        name=name, motion=MotionSpec("ou", dim=d, gamma=gamma), mech=mech, eigen=eig,
        a_fn=lambda t: np.sqrt((lam / gs + delta) * t), K=1.0, p=2.0, delta=delta, slln_eps=gs * delta / 2,
        params=dict(gamma=gamma, c1=c1, c2=c2, c_alpha=c_alpha, dim=d, theta=th),
        description="inward OU, beta = c1|x|^2 + c2 unbounded above, alpha ~ 1/phi",
    )


def _square_well(theta):
    """Ground state of 1/2 d^2/dx^2 + theta 1_[-1,1] on R."""
    g = lambda lam: np.sqrt(2 * (theta - lam)) * np.tan(np.sqrt(2 * (theta - lam))) - np.sqrt(2 * lam)  # noqa: E731
    kmax = min(np.pi / 2, np.sqrt(2 * theta)) - 1e-12
    lam = optimize.brentq(g, theta - kmax**2 / 2 + 1e-14, theta - 1e-14)
    k, r = np.sqrt(2 * (theta - lam)), np.sqrt(2 * lam)

    def raw(x):
        x = np.abs(as_points(x)[..., 0])
        return np.where(x <= 1, np.cos(k * x), np.cos(k) * np.exp(-r * (x - 1)))

    norm2 = 2 * ((1 + np.sin(2 * k) / (2 * k)) / 2 + np.cos(k) ** 2 / (2 * r))
    c = 1 / np.sqrt(norm2)
    return lam, Callable1(lambda x: c * raw(x), "phi")


def compact_drift(theta=1.0, d=1, name="nonsymmetric-compact-drift") -> ExampleCard:
    lam, phi = _square_well(theta)
    r = np.sqrt(2 * lam)
    mech = BranchingMechanism(Callable1(lambda x: theta * Indicator(-1, 1)(x), "beta"),
                              Callable1(lambda x: 1.0 / phi(x), "alpha"))
    rho = Callable1(lambda x: np.abs(as_points(x)[..., 0]).clip(1e-300) ** ((1 - d) / 2)
                    * np.exp(-r * np.abs(as_points(x)[..., 0])), "rho")
    eig = EigenData(lambda_c=lam, phi=phi, phi_tilde=phi, w=None, w_envelope=(rho, rho),
                    note="only two-sided bounds phi, phi_tilde, w ~ rho are available")
    return ExampleCard(
        name=name, motion=MotionSpec("ou", dim=d, gamma=0.0), mech=mech, eigen=eig,
        a_fn=lambda t: np.sqrt(2 * theta) * t, K=1.0 / np.sqrt(2 * lam) + 0.5, p=2.0, partial=True,
        params=dict(theta=theta, dim=d),
        description="compactly supported potential (zero-drift member of the class); envelopes only",
    )


def wright_fisher(beta=2.0, alpha=1.0, name="wright-fisher") -> ExampleCard:
    if not beta > 1:
        raise ValueError("need beta > 1")
    motion = MotionSpec(
        "generic", dim=1, gamma=0.0, domain="interval", conservative=False, label="wright-fisher",
        drift_fn=lambda x: np.zeros_like(as_points(x)),
        diffusion_fn=lambda x: (as_points(x) * (1 - as_points(x)))[..., None],
    )
    mech = BranchingMechanism(const(beta), const(alpha))
    eig = EigenData(lambda_c=beta - 1, phi=Poly1D((0.0, 6.0, -6.0), "phi"), phi_tilde=const(1.0, "one"), w=None,
                    note="w exists but has no closed form")
    return ExampleCard(
        name=name, motion=motion, mech=mech, eigen=eig, a_fn=None, K=1.0, p=2.0,
        params=dict(beta=beta, alpha=alpha),
        description="Wright-Fisher diffusion on (0,1), quadratic constant mechanism",
    )


def tempered_card(a=0.5, b=1.0, c=0.5, alpha=0.5, beta=1.0, gamma=1.0, p=2.0, name="inward-ou-tempered"):
    pi = LevyKernel("tempered", a=a, b=b, c=c)
    return inward_ou(gamma=gamma, beta=beta, alpha=alpha, pi=pi, p=p, name=name,
                     description=f"inward OU, quadratic plus tempered power-law jumps (a={a}, b={b})")


def heavytail_card(a=1.7, c=0.2, alpha=0.5, beta=1.0, gamma=1.0, name="inward-ou-heavytail"):
    pi = LevyKernel("tempered", a=a, b=0.0, c=c)
    return inward_ou(gamma=gamma, beta=beta, alpha=alpha, pi=pi, p=1.5, name=name,
                     description=f"inward OU, untempered power-law jumps y^(-1-{a}): L^p for p < {a} only")


CARDS: dict[str, Callable[[], ExampleCard]] = {
    "inward-ou-quadratic": inward_ou,
    "inward-ou-tempered": tempered_card,
    "inward-ou-heavytail": heavytail_card,
    "outward-ou-quadratic": outward_ou,
    "unbounded-w": unbounded_w,
    "unbounded-beta": unbounded_beta,
    "nonsymmetric-compact-drift": compact_drift,
    "wright-fisher": wright_fisher,
}

_FAMILY = {
    "inward-ou": "inward-ou-quadratic",
    "outward-ou": "outward-ou-quadratic",
}


def card_names() -> list[str]:
    return list(CARDS)


def get_card(name: str, **params) -> ExampleCard:
    key = _FAMILY.get(name, name)
    if key not in CARDS:
        raise KeyError(f"unknown example {name!r}; known: {', '.join(CARDS)}")
    return CARDS[key](**params)


def eigendata(name: str, **params) -> EigenData:
    return get_card(name, **params).eigen


def martingale_function(name: str, **params) -> SpatialFunction:
    card = get_card(name, **params)
    if card.eigen.w is None:
        raise UnsupportedError(f"{name}: no closed-form martingale function")
    return card.eigen.w


# ---------------------------------------------------------------- validators

def _radial_points(motion: MotionSpec, L, n=801):
    if motion.domain == "interval":
        e = 10.0 ** (-L)
        g = np.concatenate([np.geomspace(e, 0.5, n // 2), 1 - np.geomspace(e, 0.5, n // 2)[::-1]])
    else:
        g = np.linspace(-L, L, n)
    pts = np.zeros((g.size, motion.dim))
    pts[:, 0] = g
    return pts


def _growing_sup(motion, fn, levels=(2, 4, 8, 16)):
    """Suprema of fn over growing boxes; diverging if the last doubling still grows."""
    sups = []
    for L in levels:
        with np.errstate(over="ignore", invalid="ignore"):
            v = np.asarray(fn(_radial_points(motion, L)), dtype=float)
        sups.append(float(np.nanmax(v)) if np.all(np.isfinite(v)) else np.inf)
    finite = np.isfinite(sups[-1]) and sups[-1] <= sups[-2] * (1 + 1e-3) + 1e-300
    return sups[-1], finite, sups


def validate_assumptions(card: ExampleCard) -> list[RunReport]:
    """Numerical checks of the skeleton, criticality and moment assumptions."""
    mech, eig, motion = card.mech, card.eigen, card.motion
    out: list[RunReport] = []
    meta = {"card": card.name, "p": card.p}
    phi = eig.phi
    p = card.p

    def rep(name, sup, ok, sups, note=""):
        out.append(RunReport(check=name, estimate=sup, forced=bool(ok), metadata={**meta, "box_sups": sups},
                             note=note or ("bounded" if ok else "supremum grows with the box")))

    sup, ok, sups = _growing_sup(motion, lambda x: phi(x) * mech.alpha(x))
    rep("moment.sup_phi_alpha", sup, ok, sups)

    pi = mech.pi

    def pointwise(fn):
        return lambda xs: np.array([fn(x) for x in xs])

    if pi.is_zero:
        for nm in ("moment.sup_phi_small_jumps", "moment.sup_phi_large_jumps"):
            rep(nm, 0.0, True, [0.0], "no jumps")
    else:
        sup, ok, sups = _growing_sup(motion, pointwise(lambda x: phi(x) * pi.restricted_moment(x, 2, 0.0, 1.0)), (2, 4, 8))
        rep("moment.sup_phi_small_jumps", sup, ok and np.isfinite(sup), sups)
        sup, ok, sups = _growing_sup(motion, pointwise(lambda x: phi(x) ** (p - 1) * pi.restricted_moment(x, p, 1.0)), (2, 4, 8))
        rep("moment.sup_phi_large_jumps", sup, ok and np.isfinite(sup), sups,
            "" if np.isfinite(sup) else f"int_(1,inf) y^{p} Pi(dy) diverges")

    if motion.dim == 1:
        try:
            val = card.stationary_expectation(lambda x: phi(x) ** (p - 1))
            ok = np.isfinite(val)
        except Exception as exc:  # quadrature blow-up reported, not raised
            val, ok = np.inf, False
            meta["error"] = str(exc)
        out.append(RunReport("moment.phi_power_integral", estimate=val, forced=bool(ok), metadata=dict(meta)))
        if pi.is_zero or eig.w is None:
            out.append(RunReport("moment.tilted_second_moment", estimate=0.0, forced=True, metadata=dict(meta),
                                 note="no jumps" if pi.is_zero else "w unavailable; skipped"))
        else:
            w = eig.w
            def g(x):
                pts = as_points(x).reshape(-1, 1)
                return np.array([pi.tilted(const(float(w(xx)))).restricted_moment(xx, 2, 1.0) for xx in pts])

            val = card.stationary_expectation(g)
            out.append(RunReport("moment.tilted_second_moment", estimate=val, forced=bool(np.isfinite(val)), metadata=dict(meta)))
        nrm = card.stationary_expectation(lambda x: np.ones(as_points(x).shape[:-1]))
        out.append(RunReport("criticality.normalisation", estimate=nrm, oracle=1.0, metric=abs(nrm - 1), threshold=1e-8,
                             se=0.0, metadata=dict(meta), forced=bool(abs(nrm - 1) <= 1e-8)))

    # eigen-equation residual (L + beta - lambda) phi = 0 on a grid
    grid = motion.sample_grid(201, 3.0)
    try:
        res = motion.generator(phi, grid) + (mech.beta(grid) - eig.lambda_c) * phi(grid)
        r = float(np.max(np.abs(res) / np.maximum(phi(grid), 1e-300)))
        out.append(RunReport("criticality.eigen_residual", metric=r, threshold=1e-8, metadata=dict(meta)))
    except NotImplementedError:
        out.append(RunReport("criticality.eigen_residual", forced=True, metadata=dict(meta),
                             note="phi has no analytic derivatives (partial card)"))
    out.append(RunReport("criticality.lambda_positive", estimate=eig.lambda_c, forced=eig.lambda_c > 0, metadata=dict(meta)))

    if eig.w is not None:
        w = eig.w
        vals = w(grid)
        ok = bool(np.all(vals > 0) and np.all(np.isfinite(vals)))
        out.append(RunReport("skeleton.w_positive_locally_bounded", estimate=float(np.max(vals)), forced=ok, metadata=dict(meta)))
        # PDE form of the martingale-function identity: L w = psi_beta(w)
        lw = motion.generator(w, grid)
        psi = np.array([mech.psi(x, float(w(x))) for x in grid])
        r = float(np.max(np.abs(lw - psi) / np.maximum(vals, 1e-300)))
        out.append(RunReport("skeleton.w_equation_residual", metric=r, threshold=1e-7, metadata=dict(meta)))
    else:
        out.append(RunReport("skeleton.w_positive_locally_bounded", forced=True, metadata=dict(meta),
                             note="w not in closed form; existence follows from the quadratic-mechanism argument"))
    return out


def _log_tail_moment(k, a, m, v, P=None):
    """log E[exp(k Y^2) 1{|Y| >= a}] for Y ~ N(m, v) (needs P = 1/v - 2k > 0; pass P when it cancels)."""
    if P is None:
        P = 1.0 / v - 2.0 * k
    if P <= 0:
        return np.inf
    mp = (m / v) / P
    c = -m * m / (2 * v) + (m / v) ** 2 / (2 * P)
    s = np.sqrt(P)
    tails = np.logaddexp(log_ndtr(-(a - mp) * s), log_ndtr((-a - mp) * s))
    return c - 0.5 * np.log(v * P) + tails


def check_slln_skeleton_conditions(card: ExampleCard, lattice_step=0.5, T=20.0, t0=1.0, x0=0.0,
                                   ergodic_threshold=0.05) -> list[RunReport]:
    """Support-spread condition (i) and ergodic-speed condition (ii) as curves on [t0, T]."""
    ts = np.arange(t0, T + 1e-9, lattice_step)
    meta = {"card": card.name, "delta": card.delta, "K": card.K, "t": ts.tolist()}
    if card.a_fn is None:
        return [RunReport("slln.support_spread", forced=True, metadata=meta, note="D_t = D; condition vacuous"),
                RunReport("slln.ergodic_speed", forced=True, metadata=meta,
                          note="no closed-form spine density; established analytically for this card")]
    spine = card.spine_motion()
    if spine.kind != "ou" or card.motion.dim != 1 or card.eigen.w is None:
        raise UnsupportedError("condition curves need a one-dimensional OU spine and closed-form w")
    ratio = card.eigen.w / card.eigen.phi
    Ck = ratio.single_exponential
    if Ck is None:
        raise UnsupportedError("w/phi must be of the form C exp(k|x|^2)")
    C, k = Ck
    gs = spine.gamma
    lam, eps = card.lam, card.slln_eps
    log_lhs, log_rhs = [], []
    for t in ts:
        m, v = ou_moments(gs, np.array([x0]), t)
        # 1/v - 2k without cancellation when k matches the spine's stationary precision
        P = ((1.0 - k / gs) + (k / gs) * np.exp(-2.0 * gs * t)) / v if gs > 0 else None
        log_lhs.append(np.log(C) + _log_tail_moment(k, card.a_fn(t), float(m[0]), v, P))
        log_rhs.append(-(lam + eps) * t)
    log_lhs, log_rhs = np.array(log_lhs), np.array(log_rhs)
    margin = log_lhs - log_rhs
    r1 = RunReport("slln.support_spread", metric=float(np.max(margin)), threshold=0.0,
                   metadata={**meta, "log_lhs": log_lhs.tolist(), "log_rhs": log_rhs.tolist()},
                   note="max over t of log(lhs) - log(exp(-(lambda+eps)t))")

    y2 = np.linspace(-1, 1, 41)
    vinf = 1.0 / (2 * gs)
    sup_curve = []
    for t in ts:
        s = card.K * t
        mean_max = np.exp(np.log(card.a_fn(t)) - gs * s) if card.a_fn(t) > 0 else 0.0
        ms = np.linspace(-mean_max, mean_max, 41)
        _, v = ou_moments(gs, np.zeros(1), s)
        logr = (-(y2[None, :] - ms[:, None]) ** 2 / (2 * v) - 0.5 * np.log(v)) - (-(y2[None, :] ** 2) / (2 * vinf) - 0.5 * np.log(vinf))
        sup_curve.append(float(np.max(np.abs(np.expm1(logr)))))
    sup_curve = np.array(sup_curve)
    late = sup_curve[ts >= T / 2]
    r2 = RunReport("slln.ergodic_speed", metric=float(np.max(late)), threshold=ergodic_threshold,
                   metadata={**meta, "curve": sup_curve.tolist()},
                   note="max of the ergodic-speed supremum over t in [T/2, T]")
    return [r1, r2]
