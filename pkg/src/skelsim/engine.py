"""Compiled event-driven engine shared by every simulation mode.

Two particle populations evolve together:

* mass particles (mass m each) approximating X, X* or the immigrated mass;
* skeleton particles approximating Z, which may seed mass particles.

Event times come from a global exponential race at the per-particle
bounds RM and RS; the actual, position-dependent rates are realised by
thinning.  Both populations move as OU processes (rate possibly negative
or zero) and positions are updated lazily and exactly from each particle's
last update time, so no time discretisation enters.

Rates are radial profiles ``sum (c0 + c1 r + c2 r^2) exp(k r)`` with
r = |x|^2, packed in a (n_profiles, 4, 4) array.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

from .rng import (BRANCHING, IMM_A, IMM_B, IMM_C, MOTION, exponential, gamma_sample, normal_pair,
                  poisson, stochastic_round, uniform, uniform_pos)

# profile slots
P_TWO_ALPHA, P_B, P_DJ, P_LJ, P_Q, P_RA, P_RB, P_RB1, P_PHI, P_W = range(10)
N_PROFILES = 10

# counters per replica
(C_EVENTS, C_BRANCH, C_IMM_A, C_IMM_B, C_IMM_B1, C_IMM_C, C_IMM_MASS, C_JUMPS, C_RESTARTS, C_TRUNC,
 C_STOP, C_CLIP, C_N0) = range(13)
N_COUNTS = 13
COUNT_NAMES = ("events", "branch", "imm_a", "imm_b", "imm_b_small", "imm_c", "imm_mass", "jumps",
               "restarts", "truncated", "stopped", "clipped", "skeleton_n0")

# statistic columns
S_NM, S_MASS, S_WX, S_NS, S_WZ = range(5)
N_BASE_STATS = 5

# log sources
SRC_INITIAL, SRC_A, SRC_B, SRC_C = 0, 1, 2, 3


@njit(cache=True)
def prof(P, k, r):
    """Profile k of the packed array P evaluated at r = |x|^2."""
    s = 0.0
    for j in range(P.shape[1]):
        c0 = P[k, j, 0]
        c1 = P[k, j, 1]
        c2 = P[k, j, 2]
        if c0 == 0.0 and c1 == 0.0 and c2 == 0.0:
            continue
        v = c0 + r * (c1 + r * c2)
        kk = P[k, j, 3]
        if kk != 0.0:
            v *= np.exp(kk * r)
        s += v
    return s


@njit(cache=True)
def _mass_rates(PROF, r, m):
    tae = prof(PROF, P_TWO_ALPHA, r)
    b = prof(PROF, P_B, r)
    dJ = prof(PROF, P_DJ, r)
    lJ = prof(PROF, P_LJ, r)
    crit = tae / m - abs(b) - dJ
    clipped = crit < 0.0
    if clipped:
        crit = 0.0
    birth = b if b > 0 else 0.0
    death = (-b if b < 0 else 0.0) + dJ
    return crit, birth, death, lJ, clipped


@njit(cache=True)
def _normal(st, cache):
    if cache[0] > 0.5:
        cache[0] = 0.0
        return cache[1]
    a, b = normal_pair(st, MOTION)
    cache[0] = 1.0
    cache[1] = b
    return a


@njit(cache=True)
def _advance(pos, tl, i, t, g, d, st, cache):
    dt = t - tl[i]
    if dt <= 0.0:
        return
    x = g * dt
    if abs(x) < 1e-4:
        decay = 1.0 - x
        var = dt * (1.0 - x + x * x * (2.0 / 3.0))
    else:
        decay = np.exp(-x)
        var = (1.0 - decay * decay) / (2.0 * g)
    sd = np.sqrt(var)
    for c in range(d):
        pos[i, c] = pos[i, c] * decay + sd * _normal(st, cache)
    tl[i] = t


@njit(cache=True)
def _r2(pos, i, d):
    s = 0.0
    for c in range(d):
        s += pos[i, c] * pos[i, c]
    return s


@njit(cache=True)
def _tail_sample(st, s, b, cut):
    """Sample y > cut with density proportional to y^(s-1) e^(-b y); s != 0."""
    if s > 0:
        while True:
            y = gamma_sample(st, IMM_B, s) / b
            if y > cut:
                return y
    while True:
        y = cut * uniform_pos(st, IMM_B) ** (1.0 / s)
        if b == 0.0 or uniform(st, IMM_B) < np.exp(-b * (y - cut)):
            return y


@njit(cache=True)
def _f_eval(pos, i, d, r, fk, fbox, FPROF, k):
    if fk == 1:
        for c in range(d):
            if pos[i, c] < fbox[0] or pos[i, c] > fbox[1]:
                return 0.0
        return 1.0
    return prof(FPROF, k, r)


ST_OK, ST_VIOLATION, ST_CAP_MASS, ST_CAP_SKEL, ST_CAP_LOG = range(5)


@njit(cache=True)
def run_replica(st, d, positions, const_mass, const_skel, use_mass, use_skel, dress, m, eps, gm, gs, lam,
                PROF, FPROF, fkind, fbox,
                jkind, ja, jb, jcut, ikind, ia, ib, icut,
                pk_cdf, tail_ratio, ykind, ya, yrate, yzero2,
                mu_pos, mu_mass, t_snap, RM, RS, max_pop, stop_mass, log_on,
                capM, capS, capL, stats, counts):
    """Simulate one replica with fixed array capacities.

    Returns (status, skeleton log, immigration log, branch log).  A status
    other than ST_OK means the run was abandoned (bound violated or an
    array full) and must be restarted from the same generator state.
    Arrays are never reallocated inside the event loop: numba adds
    reference counting to every iteration when they are.
    """
    nf = fkind.shape[0]
    cache = np.zeros(2)
    posM = np.empty((capM, d))
    tM = np.empty(capM)
    posS = np.empty((capS, d))
    tS = np.empty(capS)
    idS = np.empty(capS, dtype=np.int64)
    nM = 0
    nS = 0
    next_id = 0
    nlog_i = 0
    nlog_b = 0
    lcap = capL if log_on else 1
    skel_log = np.full((lcap, 4), np.nan)
    imm_log = np.full((lcap, 5), np.nan)
    br_log = np.full((lcap, 4), np.nan)
    for c in range(counts.shape[0]):
        counts[c] = 0.0
    stats[:, :] = np.nan
    status = ST_OK

    # ---- initial state
    for a in range(mu_mass.shape[0]):
        if use_mass:
            n = stochastic_round(st, BRANCHING, mu_mass[a] / m)
            if nM + n > capM:
                return ST_CAP_MASS, skel_log[:0], imm_log[:0], br_log[:0]
            for j in range(n):
                for c in range(d):
                    posM[nM, c] = mu_pos[a, c]
                tM[nM] = 0.0
                nM += 1
        if use_skel:
            r = 0.0
            for c in range(d):
                r += mu_pos[a, c] * mu_pos[a, c]
            n = poisson(st, BRANCHING, prof(PROF, P_W, r) * mu_mass[a])
            if nS + n > capS:
                return ST_CAP_SKEL, skel_log[:0], imm_log[:0], br_log[:0]
            if log_on and next_id + n > lcap:
                return ST_CAP_LOG, skel_log[:0], imm_log[:0], br_log[:0]
            for j in range(n):
                for c in range(d):
                    posS[nS, c] = mu_pos[a, c]
                tS[nS] = 0.0
                idS[nS] = next_id
                if log_on:
                    skel_log[next_id, 0] = next_id
                    skel_log[next_id, 1] = -1
                    skel_log[next_id, 2] = 0.0
                next_id += 1
                nS += 1
    counts[C_N0] = nS

    c_crit, c_birth, c_death, c_lJ, clipped = _mass_rates(PROF, 0.0, m)
    if clipped and use_mass and const_mass:
        counts[C_CLIP] += 1
    c_q = prof(PROF, P_Q, 0.0)
    c_ra = prof(PROF, P_RA, 0.0) if dress else 0.0
    c_rb = prof(PROF, P_RB, 0.0) if dress else 0.0
    c_rb1 = prof(PROF, P_RB1, 0.0) if dress else 0.0

    t = 0.0
    js = 0
    nsnap = t_snap.shape[0]
    while True:
        total = nM * RM + nS * RS
        if total > 0.0:
            t_next = t + exponential(st, BRANCHING) / total
        else:
            t_next = np.inf
        # snapshots falling before the next event
        while js < nsnap and t_snap[js] <= t_next:
            ts = t_snap[js]
            disc = np.exp(-lam * ts)
            wx = 0.0
            fx = np.zeros(nf)
            fz = np.zeros(nf)
            for i in range(nM):
                r = 0.0
                if positions:
                    _advance(posM, tM, i, ts, gm, d, st, cache)
                    r = _r2(posM, i, d)
                wx += prof(PROF, P_PHI, r)
                for k in range(nf):
                    fx[k] += _f_eval(posM, i, d, r, fkind[k], fbox[k], FPROF, k)
            wz = 0.0
            for i in range(nS):
                r = 0.0
                if positions:
                    _advance(posS, tS, i, ts, gs, d, st, cache)
                    r = _r2(posS, i, d)
                wz += prof(PROF, P_PHI, r) / prof(PROF, P_W, r)
                for k in range(nf):
                    fz[k] += _f_eval(posS, i, d, r, fkind[k], fbox[k], FPROF, k)
            stats[js, S_NM] = nM
            stats[js, S_MASS] = nM * m
            stats[js, S_WX] = disc * m * wx
            stats[js, S_NS] = nS
            stats[js, S_WZ] = disc * wz
            for k in range(nf):
                stats[js, N_BASE_STATS + k] = m * fx[k]
                stats[js, N_BASE_STATS + nf + k] = fz[k]
            js += 1
        if js >= nsnap:
            break
        t = t_next
        counts[C_EVENTS] += 1
        u = uniform(st, BRANCHING) * total
        if u < nM * RM:
            # ---------------- mass particle event
            i = min(int(u / RM), nM - 1)
            r = 0.0
            if positions and not const_mass:
                _advance(posM, tM, i, t, gm, d, st, cache)
                r = _r2(posM, i, d)
            if const_mass:
                crit, birth, death, lJ = c_crit, c_birth, c_death, c_lJ
            else:
                crit, birth, death, lJ, clipped = _mass_rates(PROF, r, m)
                if clipped:
                    counts[C_CLIP] += 1
            rate = crit + birth + death + lJ
            if rate > RM * (1.0 + 1e-12):
                status = ST_VIOLATION
                break
            v = uniform(st, BRANCHING) * RM
            if v >= rate:
                continue
            add = 0
            remove = False
            if v < crit:
                if uniform(st, BRANCHING) < 0.5:
                    remove = True
                else:
                    add = 1
            elif v < crit + birth:
                add = 1
            elif v < crit + birth + death:
                remove = True
            else:
                counts[C_JUMPS] += 1
                y = _tail_sample(st, -ja, jb, jcut)
                add = stochastic_round(st, IMM_B, y / m)
            if remove:
                nM -= 1
                for c in range(d):
                    posM[i, c] = posM[nM, c]
                tM[i] = tM[nM]
            elif add > 0:
                if nM + nS + add > max_pop:
                    counts[C_TRUNC] = 1
                    break
                if nM + add > capM:
                    status = ST_CAP_MASS
                    break
                if positions and const_mass:
                    _advance(posM, tM, i, t, gm, d, st, cache)
                for j in range(add):
                    for c in range(d):
                        posM[nM, c] = posM[i, c]
                    tM[nM] = tM[i]
                    nM += 1
                if (not use_skel) and nM * m >= stop_mass:
                    counts[C_STOP] = 1
                    break
        else:
            # ---------------- skeleton particle event
            i = min(int((u - nM * RM) / RS), nS - 1)
            r = 0.0
            if positions and not const_skel:
                _advance(posS, tS, i, t, gs, d, st, cache)
                r = _r2(posS, i, d)
            if const_skel:
                q, ra, rb, rb1 = c_q, c_ra, c_rb, c_rb1
            else:
                q = prof(PROF, P_Q, r)
                ra = prof(PROF, P_RA, r) if dress else 0.0
                rb = prof(PROF, P_RB, r) if dress else 0.0
                rb1 = prof(PROF, P_RB1, r) if dress else 0.0
            rate = q + ra + rb + rb1
            if rate > RS * (1.0 + 1e-12):
                status = ST_VIOLATION
                break
            v = uniform(st, BRANCHING) * RS
            if v >= rate:
                continue
            if positions and const_skel:
                _advance(posS, tS, i, t, gs, d, st, cache)
            add = 0
            issuer = idS[i]
            src = 0
            ymass = 0.0
            if v < q:
                counts[C_BRANCH] += 1
                uu = uniform(st, BRANCHING)
                k = -1
                for j in range(pk_cdf.shape[0]):
                    if uu < pk_cdf[j]:
                        k = j + 2
                        break
                if k < 0:
                    # beyond the table: geometric continuation of the tail
                    k = pk_cdf.shape[0] + 2
                    if tail_ratio > 0:
                        while uniform(st, BRANCHING) < tail_ratio:
                            k += 1
                if nM + nS + k > max_pop:
                    counts[C_TRUNC] = 1
                    break
                if nS + k - 1 > capS:
                    status = ST_CAP_SKEL
                    break
                if log_on and (next_id + k > lcap or nlog_b >= lcap):
                    status = ST_CAP_LOG
                    break
                parent = idS[i]
                if log_on:
                    br_log[nlog_b, 0] = t
                    br_log[nlog_b, 1] = parent
                    br_log[nlog_b, 2] = k
                    br_log[nlog_b, 3] = posS[i, 0]
                    nlog_b += 1
                    skel_log[parent, 3] = t
                # the particle is replaced by k children at its position
                for j in range(k):
                    if j == 0:
                        slot = i
                    else:
                        slot = nS
                        nS += 1
                        for c in range(d):
                            posS[slot, c] = posS[i, c]
                        tS[slot] = tS[i]
                    idS[slot] = next_id
                    if log_on:
                        skel_log[next_id, 0] = next_id
                        skel_log[next_id, 1] = parent
                        skel_log[next_id, 2] = t
                    next_id += 1
                if dress and use_mass and ykind == 1:
                    if not (k == 2 and uniform(st, IMM_C) < yzero2):
                        ymass = gamma_sample(st, IMM_C, k - ya) / yrate
                        add = stochastic_round(st, IMM_C, ymass / m)
                        src = SRC_C
                        counts[C_IMM_C] += 1
            elif v < q + ra:
                counts[C_IMM_A] += 1
                ymass = eps
                add = stochastic_round(st, IMM_A, eps / m)
                src = SRC_A
            elif v < q + ra + rb:
                counts[C_IMM_B] += 1
                ymass = _tail_sample(st, 1.0 - ia, ib, icut)
                add = stochastic_round(st, IMM_B, ymass / m)
                src = SRC_B
            else:
                counts[C_IMM_B1] += 1
                ymass = m
                add = 1
                src = SRC_B
            if src > 0 and log_on:
                if nlog_i >= lcap:
                    status = ST_CAP_LOG
                    break
                imm_log[nlog_i, 0] = t
                imm_log[nlog_i, 1] = src
                imm_log[nlog_i, 2] = ymass
                imm_log[nlog_i, 3] = issuer
                imm_log[nlog_i, 4] = posS[i, 0]
                nlog_i += 1
            if add > 0 and use_mass:
                counts[C_IMM_MASS] += add * m
                if nM + nS + add > max_pop:
                    counts[C_TRUNC] = 1
                    break
                if nM + add > capM:
                    status = ST_CAP_MASS
                    break
                for j in range(add):
                    for c in range(d):
                        posM[nM, c] = posS[i, c]
                    tM[nM] = t
                    nM += 1
    if log_on:
        # particles alive at the end have no death time
        for j in range(next_id):
            if np.isnan(skel_log[j, 3]):
                skel_log[j, 3] = np.inf
    return status, skel_log[:next_id if log_on else 0], imm_log[:nlog_i], br_log[:nlog_b]


@njit(cache=True, parallel=True)
def run_batch(states, d, positions, const_mass, const_skel, use_mass, use_skel, dress, m, eps, gm, gs, lam,
              PROF, FPROF, fkind, fbox,
              jkind, ja, jb, jcut, ikind, ia, ib, icut,
              pk_cdf, tail_ratio, ykind, ya, yrate, yzero2,
              mu_pos, mu_mass, t_snap, RM, RS, max_pop, stop_mass,
              stats, counts, bounds):
    """Replicas in parallel.  A thinning-bound violation doubles the bounds,
    a full array doubles its capacity; both restart the replica from its
    original generator state, so results do not depend on either."""
    R = states.shape[0]
    for rep in prange(R):
        rm = RM
        rs = RS
        capM = 4096
        capS = 1024
        restarts = 0
        while True:
            st = states[rep].copy()
            status, _, _, _ = run_replica(st, d, positions, const_mass, const_skel, use_mass, use_skel, dress,
                                          m, eps, gm, gs, lam,
                                          PROF, FPROF, fkind, fbox,
                                          jkind, ja, jb, jcut, ikind, ia, ib, icut,
                                          pk_cdf, tail_ratio, ykind, ya, yrate, yzero2,
                                          mu_pos, mu_mass, t_snap, rm, rs, max_pop, stop_mass, False,
                                          capM, capS, 1, stats[rep], counts[rep])
            if status == ST_OK or restarts > 80:
                break
            restarts += 1
            if status == ST_VIOLATION:
                rm *= 2.0
                rs *= 2.0
            elif status == ST_CAP_MASS:
                capM = min(2 * capM, max_pop + 1)
            elif status == ST_CAP_SKEL:
                capS = min(2 * capS, max_pop + 1)
        counts[rep, C_RESTARTS] = restarts
        bounds[rep, 0] = rm
        bounds[rep, 1] = rs


# ====================================================================== front end

from dataclasses import dataclass, field  # noqa: E402

from .errors import ConfigError, UnsupportedError  # noqa: E402
from .functions import Indicator, Profile, SpatialFunction, as_points, const  # noqa: E402
from .mechanism import LevyKernel, skeleton_offspring, star_transform  # noqa: E402
from .rng import replica_states  # noqa: E402

MODES = ("direct", "xstar", "skeleton", "composed")


def _profile(f, what) -> Profile:
    if isinstance(f, Profile):
        return f
    raise UnsupportedError(f"{what} must be a radial profile for the compiled engine")


def _constant_kernel(pi: LevyKernel):
    """(mod, tilt) of a spatially constant tempered kernel with unit size scale."""
    if pi.is_zero:
        return None
    if pi.family != "tempered" or not pi.spatially_constant:
        raise UnsupportedError("the engine handles spatially constant tempered jump kernels only")
    x0 = np.zeros(1)
    mod, s, t = pi.local(x0)
    if s != 1.0:
        raise UnsupportedError("the engine needs a unit jump size scale")
    return mod, t


@dataclass
class EngineSetup:
    """Everything the kernel needs, derived once from a card and a mode.

    ``mu`` is a list of (position, mass) atoms; ``functions`` are test
    functions (indicators of boxes or radial profiles) whose integrals
    against X and Z are recorded at each snapshot.
    """

    card: object
    mode: str = "direct"
    m: float = 0.01
    eps: float = 0.05
    functions: tuple = ()
    K: int = 64
    max_pop: int = 10**7
    stop_mass: float = np.inf
    positions: bool | None = None
    box: float = 6.0
    arrays: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.m > 0:
            raise ConfigError("mass unit m must be positive")
        if self.mode == "composed" and not self.eps > 0:
            raise ConfigError("epsilon must be positive")
        motion = self.card.motion
        if motion.kind != "ou" or motion.domain != "full":
            raise UnsupportedError("the compiled engine simulates OU or Brownian motions on R^d")
        self.arrays = self._build()

    # ---------------------------------------------------------------- build
    def _build(self):
        card, m = self.card, self.m
        mode = self.mode
        use_skel = mode in ("skeleton", "composed")
        use_mass = mode != "skeleton"
        dress = mode == "composed"
        zero = const(0.0)
        x0 = np.zeros(1)
        profs = {k: zero for k in range(N_PROFILES)}
        phi = _profile(card.eigen.phi, "phi")
        profs[P_PHI] = phi
        w = None
        if use_skel or mode == "xstar":
            w = _profile(card.w, "w")
        profs[P_W] = w if w is not None else const(1.0)

        mech = card.mech
        if mode in ("xstar", "composed"):
            mass_mech = star_transform(mech, w).as_mechanism()
        else:
            mass_mech = mech
        jk = dict(jkind=0, ja=0.5, jb=1.0, jcut=m)
        if use_mass:
            A = _profile(mass_mech.alpha, "alpha")
            B = _profile(mass_mech.beta, "beta")
            kern = _constant_kernel(mass_mech.pi)
            V = dJ = lJ = 0.0
            if kern is not None:
                pi = mass_mech.pi
                V = pi.restricted_moment(x0, 2, 0.0, m)
                dJ = pi.restricted_moment(x0, 1, m)
                lJ = m * pi.restricted_moment(x0, 0, m)
                jk = dict(jkind=1, ja=pi.a, jb=pi.b + kern[1], jcut=m)
            profs[P_TWO_ALPHA] = A * 2.0 + V
            profs[P_B] = B
            profs[P_DJ] = const(dJ)
            profs[P_LJ] = const(lJ)

        pk_cdf = np.ones(1)
        tail_ratio = 0.0
        yk = dict(ykind=0, ya=0.5, yrate=1.0, yzero2=1.0)
        ik = dict(ikind=0, ia=0.5, ib=1.0, icut=m)
        self.offspring = None
        if use_skel:
            kern = _constant_kernel(mech.pi)
            if kern is None:
                profs[P_Q] = _profile(mech.alpha, "alpha") * w
            else:
                if not w.is_constant:
                    raise UnsupportedError("jumps with a non-constant martingale function")
                law = skeleton_offspring(mech, w, x0, K=self.K)
                self.offspring = law
                profs[P_Q] = const(law.q)
                pk_cdf = np.cumsum(law.pk)
                tail_ratio = law.tail_ratio
                pi = mech.pi
                wv = float(w(x0))
                be = pi.b + kern[1]
                yk = dict(ykind=1, ya=pi.a, yrate=be + wv, yzero2=law.zero_mass_weight)
                if dress:
                    ps = pi.tilted(const(wv))
                    profs[P_RB] = const(ps.restricted_moment(x0, 1, m))
                    profs[P_RB1] = const(ps.restricted_moment(x0, 2, 0.0, m) / m)
                    ik = dict(ikind=1, ia=pi.a, ib=be + wv, icut=m)
            if dress:
                profs[P_RA] = _profile(mech.alpha, "alpha") * (2.0 / self.eps)

        P = [profs[k].array for k in range(N_PROFILES)]
        nt = max(p.shape[0] for p in P)
        PROF = np.zeros((N_PROFILES, nt, 4))
        for k, p in enumerate(P):
            PROF[k, : p.shape[0]] = p

        nf = len(self.functions)
        fk = np.zeros(nf, dtype=np.int64)
        fbox = np.zeros((nf, 2))
        fl = [np.zeros((1, 4))]
        for i, f in enumerate(self.functions):
            if isinstance(f, Indicator):
                fk[i] = 1
                fbox[i] = (f.lo, f.hi)
            elif isinstance(f, Profile):
                fl.append(f.array)
            else:
                raise UnsupportedError(f"test function {getattr(f, 'name', f)!r} not supported by the engine")
        ntf = max(a.shape[0] for a in fl)
        FPROF = np.zeros((max(nf, 1), ntf, 4))
        j = 1
        for i, f in enumerate(self.functions):
            if fk[i] == 0:
                FPROF[i, : fl[j].shape[0]] = fl[j]
                j += 1

        positions = self.positions
        if positions is None:
            spatial = [profs[k] for k in range(N_PROFILES)] + list(self.functions)
            positions = not all(getattr(f, "is_constant", False) for f in spatial)
        gm = card.motion.gamma
        gs = card.skeleton_motion().gamma if use_skel else gm

        const_mass = all(np.all(PROF[k][:, 1:] == 0) for k in (P_TWO_ALPHA, P_B, P_DJ, P_LJ))
        const_skel = all(np.all(PROF[k][:, 1:] == 0) for k in (P_Q, P_RA, P_RB, P_RB1))
        RM, RS = self._bounds(PROF, m, use_mass, use_skel, dress, const_mass, const_skel)
        return dict(
            d=card.motion.dim, positions=bool(positions), const_mass=bool(const_mass), const_skel=bool(const_skel), use_mass=use_mass, use_skel=use_skel, dress=dress,
            m=float(m), eps=float(self.eps), gm=float(gm), gs=float(gs), lam=float(card.lam),
            PROF=PROF, FPROF=FPROF, fkind=fk, fbox=fbox,
            jkind=jk["jkind"], ja=float(jk["ja"]), jb=float(jk["jb"]), jcut=float(jk["jcut"]),
            ikind=ik["ikind"], ia=float(ik["ia"]), ib=float(ik["ib"]), icut=float(ik["icut"]),
            pk_cdf=np.asarray(pk_cdf, float), tail_ratio=float(tail_ratio),
            ykind=yk["ykind"], ya=float(yk["ya"]), yrate=float(yk["yrate"]), yzero2=float(yk["yzero2"]),
            RM=RM, RS=RS,
        )

    def _bounds(self, PROF, m, use_mass, use_skel, dress, const_mass, const_skel):
        """Thinning bounds: grid supremum x1.5, or the exact rate when it is constant."""
        r = np.linspace(0.0, self.box**2, 2001)

        def ev(k):
            out = np.zeros_like(r)
            for c0, c1, c2, kk in PROF[k]:
                out += (c0 + c1 * r + c2 * r * r) * np.exp(kk * r)
            return out

        RM = RS = 0.0
        if use_mass:
            b = ev(P_B)
            crit = np.maximum(ev(P_TWO_ALPHA) / m - np.abs(b) - ev(P_DJ), 0.0)
            tot = crit + np.abs(b) + ev(P_DJ) + ev(P_LJ)
            RM = (1.0 if const_mass else 1.5) * float(np.max(tot))
        if use_skel:
            tot = ev(P_Q) + (ev(P_RA) + ev(P_RB) + ev(P_RB1) if dress else 0.0)
            RS = (1.0 if const_skel else 1.5) * float(np.max(tot))
        return max(RM, 1e-12), max(RS, 1e-12)

    # ---------------------------------------------------------------- columns
    @property
    def columns(self) -> list[str]:
        cols = ["n_mass", "mass", "W_X", "n_skel", "W_Z"]
        names = [getattr(f, "name", f"f{i}") for i, f in enumerate(self.functions)]
        return cols + [f"X.{n}" for n in names] + [f"Z.{n}" for n in names]


def _mu_arrays(mu, d):
    if not mu:
        return np.zeros((0, d)), np.zeros(0)
    pos = np.array([np.broadcast_to(as_points(p), (d,)) for p, _ in mu], dtype=float).reshape(-1, d)
    mass = np.array([float(a) for _, a in mu], dtype=float)
    if np.any(mass < 0):
        raise ConfigError("initial masses must be nonnegative")
    return pos, mass


@dataclass
class SimResult:
    times: np.ndarray
    stats: np.ndarray  # (replicas, times, columns)
    counts: np.ndarray  # (replicas, N_COUNTS)
    columns: list
    seed: int
    replica_ids: np.ndarray

    def col(self, name) -> np.ndarray:
        return self.stats[:, :, self.columns.index(name)]

    def count(self, name) -> np.ndarray:
        return self.counts[:, COUNT_NAMES.index(name)]


def _kernel_args(A, mu_pos, mu_mass, t_snap, max_pop, stop_mass):
    return (A["d"], A["positions"], A["const_mass"], A["const_skel"], A["use_mass"], A["use_skel"], A["dress"], A["m"], A["eps"], A["gm"], A["gs"],
            A["lam"], A["PROF"], A["FPROF"], A["fkind"], A["fbox"],
            A["jkind"], A["ja"], A["jb"], A["jcut"], A["ikind"], A["ia"], A["ib"], A["icut"],
            A["pk_cdf"], A["tail_ratio"], A["ykind"], A["ya"], A["yrate"], A["yzero2"],
            mu_pos, mu_mass, t_snap)


def simulate(setup: EngineSetup, mu, times, replicas: int, seed: int, jobs: int | None = None,
             first_replica: int = 0) -> SimResult:
    """Run independent replicas; replica i always uses the streams keyed by (seed, i)."""
    import numba

    A = setup.arrays
    t_snap = np.asarray(times, dtype=float)
    if np.any(np.diff(t_snap) < 0) or np.any(t_snap < 0):
        raise ConfigError("snapshot times must be nonnegative and sorted")
    mu_pos, mu_mass = _mu_arrays(mu, A["d"])
    ids = np.arange(first_replica, first_replica + replicas)
    states = replica_states(seed, ids)
    ncol = N_BASE_STATS + 2 * len(setup.functions)
    stats = np.full((replicas, t_snap.size, ncol), np.nan)
    counts = np.zeros((replicas, N_COUNTS))
    bounds = np.zeros((replicas, 2))
    old = numba.get_num_threads()
    if jobs:
        numba.set_num_threads(max(1, min(int(jobs), numba.config.NUMBA_NUM_THREADS)))
    try:
        run_batch(states, *_kernel_args(A, mu_pos, mu_mass, t_snap, setup.max_pop, setup.stop_mass)[:],
                  A["RM"], A["RS"], int(setup.max_pop), float(setup.stop_mass), stats, counts, bounds)
    finally:
        numba.set_num_threads(old)
    return SimResult(times=t_snap, stats=stats, counts=counts, columns=setup.columns, seed=seed, replica_ids=ids)


def simulate_logged(setup: EngineSetup, mu, times, seed: int, replica: int = 0):
    """One replica with full event logs (skeleton genealogy, immigration ledger, branch events)."""
    A = setup.arrays
    t_snap = np.asarray(times, dtype=float)
    mu_pos, mu_mass = _mu_arrays(mu, A["d"])
    ncol = N_BASE_STATS + 2 * len(setup.functions)
    rm, rs = A["RM"], A["RS"]
    caps = [4096, 1024, 4096]
    for _ in range(80):
        st = replica_states(seed, [replica])[0]
        stats = np.full((t_snap.size, ncol), np.nan)
        counts = np.zeros(N_COUNTS)
        status, slog, ilog, blog = run_replica(st, *_kernel_args(A, mu_pos, mu_mass, t_snap, setup.max_pop,
                                                                  setup.stop_mass),
                                               rm, rs, int(setup.max_pop), float(setup.stop_mass), True,
                                               caps[0], caps[1], caps[2], stats, counts)
        if status == ST_OK:
            return stats, counts, slog, ilog, blog
        if status == ST_VIOLATION:
            rm, rs = 2 * rm, 2 * rs
        else:
            caps[status - ST_CAP_MASS] *= 2
    raise RuntimeError("replica could not be completed within the restart budget")
