"""Command line interface: ``skelsim <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, make_function, parse_config, resolve_function
from .errors import SkelsimError
from .output import plot_band, sidecar, write_csv, write_manifest

CHECKS = ("mto", "variance", "laplace", "slln", "extinction", "ergodic", "martingale")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--replicas", type=int, help="number of independent replicas")
    p.add_argument("--jobs", type=int, help="worker threads (default: $SKELSIM_JOBS or all cores)")
    p.add_argument("--out", help="output CSV path (plots and manifest are written next to it)")
    p.add_argument("--strict", action="store_true", help="exit 1 if any verdict fails")
    return p


def _card_args(p, T=True):
    p.add_argument("--card", help="catalog card name")
    if T:
        p.add_argument("--T", type=float, help="time horizon")
        p.add_argument("--times", help="comma separated snapshot times (default: T)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="skelsim", parents=[common],
                                 description="Skeleton-decomposition simulator for supercritical superdiffusions.")
    sub = ap.add_subparsers(dest="command", metavar="{catalog,mech,mild,skeleton,super,spine,verify}")
    sub.required = True

    p = sub.add_parser("catalog", parents=[common], help="list or show example cards")
    p.add_argument("action", nargs="?", choices=["list", "show"], default="list")
    p.add_argument("name", nargs="?", help="card to show")
    p.add_argument("--card", help="only this card")
    p.add_argument("--validate", action="store_true", help="run the assumption validators")

    p = sub.add_parser("mech", parents=[common], help="skeleton offspring law and star mechanism of a card")
    p.add_argument("--card")
    p.add_argument("--K", type=int, default=32)

    p = sub.add_parser("mild", parents=[common], help="mild-equation solver")
    p.add_argument("action", choices=["solve"])
    _card_args(p, T=False)
    p.add_argument("--T", type=float)
    p.add_argument("--f", help="test function spec, e.g. 'indicator -1 1'")
    p.add_argument("--dt", type=float)
    p.add_argument("--nx", type=int, default=400)

    p = sub.add_parser("skeleton", parents=[common], help="simulate the skeleton")
    p.add_argument("action", choices=["run"])
    _card_args(p)
    p.add_argument("--f", action="append", help="test function spec (repeatable)")

    p = sub.add_parser("super", parents=[common], help="simulate the superprocess")
    p.add_argument("action", choices=["run"])
    _card_args(p)
    p.add_argument("--mode", choices=["skeleton", "direct"])
    p.add_argument("--m", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--f", action="append")

    p = sub.add_parser("spine", parents=[common], help="spine traces and L^p curves")
    p.add_argument("action", choices=["run"])
    _card_args(p, T=False)
    p.add_argument("--T", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--dt", type=float, default=0.05)

    p = sub.add_parser("verify", parents=[common], help="statistical checks against oracles")
    p.add_argument("check", choices=CHECKS)
    _card_args(p)
    p.add_argument("--mode", choices=["skeleton", "direct"], default="direct")
    p.add_argument("--m", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--f", help="test function spec")
    return ap


# ---------------------------------------------------------------- settings

class _Settings:
    """Command-line values over config-file values over defaults."""

    def __init__(self, ns):
        self.ns = ns
        self.cfg = parse_config(ns.config) if getattr(ns, "config", None) else RunConfig()
        env = os.environ.get("SKELSIM_JOBS")
        self.jobs = getattr(ns, "jobs", None) or self.cfg.jobs or (int(env) if env else None)
        self.seed = getattr(ns, "seed", self.cfg.seed)
        self.replicas = getattr(ns, "replicas", self.cfg.replicas)
        self.strict = getattr(ns, "strict", False)
        self.out = getattr(ns, "out", None) or self.cfg.out

    def get(self, name, default=None):
        v = getattr(self.ns, name, None)
        if v is not None:
            return v
        if name == "card" and self.cfg.source:
            return self.cfg.card_name
        if self.cfg.source and hasattr(self.cfg, name):
            return getattr(self.cfg, name)
        return default

    @property
    def card(self):
        from .catalog import get_card

        name = self.get("card", "inward-ou-quadratic")
        params = self.cfg.params if self.cfg.source and name == self.cfg.card_name else {}
        return get_card(name, **params)

    def times(self, T):
        raw = getattr(self.ns, "times", None)
        if raw:
            return np.array(sorted(float(v) for v in raw.split(",")))
        if self.cfg.source and self.cfg.times:
            return np.asarray(self.cfg.times, float)
        return np.array([T])

    def functions(self, card, default=("indicator -1 1",)):
        specs = getattr(self.ns, "f", None)
        if isinstance(specs, str):
            specs = [specs]
        if specs:
            fs = [resolve_function(make_function(s), card) for s in specs]
        elif self.cfg.source and self.cfg.functions:
            fs = list(self.cfg.functions)
        else:
            fs = [resolve_function(make_function(s), card) for s in default]
        names = set()
        out = []
        for i, f in enumerate(fs):
            if f.name in names:
                f = dataclasses.replace(f, name=f"{f.name}{i}")
            names.add(f.name)
            out.append(f)
        return tuple(out)

    def path(self, command):
        return Path(self.out) if self.out else Path(f"skelsim_{command}.csv")


def _finish(st: _Settings, csv_path, echo: dict, plots=()):
    outputs = [csv_path, *plots]
    write_manifest(sidecar(csv_path, ".manifest.json"), echo, st.seed, outputs)
    print(f"wrote {csv_path}")


def _mean_se(a):
    a = np.asarray(a, float)
    n = a.shape[0]
    return a.mean(axis=0), (a.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(a.shape[1:]))


# ---------------------------------------------------------------- commands

def cmd_catalog(st, ns):
    from .catalog import CARDS, get_card, validate_assumptions

    one = getattr(ns, "name", None) or getattr(ns, "card", None)
    if ns.action == "show" and not one:
        raise SkelsimError("catalog show needs a card name")
    names = [one] if one else list(CARDS)
    rows = []
    for n in names:
        card = get_card(n)
        for k, v in card.summary().items():
            rows.append((n, k, v))
        if getattr(ns, "validate", False):
            for r in validate_assumptions(card):
                rows.append((n, f"check.{r.check}", r.verdict))
    path = st.path("catalog")
    write_csv(path, ["card", "key", "value"], rows)
    if ns.action == "show":
        for _, k, v in rows:
            print(f"{k}: {v}")
    else:
        for n in names:
            print(f"{n:28s} {get_card(n).description}")
    _finish(st, path, {"command": "catalog", "cards": names})
    return 0


def cmd_mech(st, ns):
    from .mechanism import csbp_root, skeleton_offspring, star_transform

    card = st.card
    x0 = np.zeros(card.motion.dim)
    law = skeleton_offspring(card.mech, card.w, x0, K=ns.K)
    bstar = float(star_transform(card.mech, card.w).beta_star(x0))
    rows = [(int(k), float(p)) for k, p in zip(law.ks, law.pk)]
    path = st.path("mech")
    write_csv(path, ["k", "p_k"], rows)
    zs = csbp_root(card.mech) if card.mech.spatially_constant else None
    print(f"card={card.name} q={law.q:.10g} sum_p={law.total:.12g} mean={law.mean:.10g} beta*={bstar:.10g}"
          + (f" z*={zs:.10g}" if zs is not None else ""))
    _finish(st, path, {"command": "mech", "card": card.name, "K": ns.K})
    return 0


def cmd_mild(st, ns):
    from .mildsolver import solve_mild

    card = st.card
    T = st.get("T", 1.0)
    dt = st.get("dt", 0.02)
    f = st.functions(card)[0]
    sol = solve_mild(card.mech, card.motion, f, T=T, dt=dt, nx=ns.nx)
    path = st.path("mild")
    write_csv(path, ["x", "t", "u"], sol.rows())
    svg = sidecar(path, ".svg")
    plot_band(svg, sol.x, {f"u(x, {T:g})": (sol.u[-1], np.zeros_like(sol.x))}, "u", f"mild solution, f={f.name}")
    print(f"iterations={sol.iterations} residual={sol.residual:.3g} u(0,T)={float(sol.at(0.0)[0]):.10g}")
    _finish(st, path, {"command": "mild", "card": card.name, "T": T, "dt": dt, "f": f.name}, [svg])
    return 0


def cmd_skeleton(st, ns):
    from .skeleton import simulate_skeleton

    card = st.card
    T = st.get("T", 1.0)
    times = st.times(T)
    fs = st.functions(card)
    res = simulate_skeleton(card, [(0.0, 1.0)], times, st.replicas, st.seed, fs, jobs=st.jobs)
    header = ["replica", "t", "count", "W_Z"] + [f"Z.{f.name}" for f in fs]
    rows = []
    for i, r in enumerate(res.replica_ids):
        for j, t in enumerate(times):
            rows.append([int(r), float(t), int(res.col("n_skel")[i, j]), float(res.col("W_Z")[i, j])]
                        + [float(res.col(f"Z.{f.name}")[i, j]) for f in fs])
    path = st.path("skeleton")
    write_csv(path, header, rows)
    svg = sidecar(path, ".svg")
    plot_band(svg, times, {"W_Z": _mean_se(res.col("W_Z"))}, "mean", f"skeleton martingale, {card.name}")
    _finish(st, path, {"command": "skeleton run", "card": card.name, "times": times.tolist(),
                       "replicas": st.replicas}, [svg])
    return 0


def cmd_super(st, ns):
    from .immigration import dress_skeleton, run_super_direct

    card = st.card
    T = st.get("T", 1.0)
    times = st.times(T)
    mode = st.get("mode", "skeleton")
    mode = "skeleton" if mode == "composed" else mode
    m = st.get("m", 0.01)
    eps = st.get("eps", 0.05)
    fs = st.functions(card)
    mu = [(0.0, 1.0)]
    if mode == "skeleton":
        res = dress_skeleton(card, mu, times, st.replicas, st.seed, m=m, eps=eps, functions=fs, jobs=st.jobs)
    else:
        res = run_super_direct(card, mu, times, st.replicas, st.seed, m=m, functions=fs, jobs=st.jobs)
    ledger = ["imm_a", "imm_b", "imm_b_small", "imm_c", "restarts", "truncated"]
    header = ["replica", "t", "total_mass", "W_X"] + [f"X.{f.name}" for f in fs] + ledger
    rows = []
    for i, r in enumerate(res.replica_ids):
        for j, t in enumerate(times):
            rows.append([int(r), float(t), float(res.col("mass")[i, j]), float(res.col("W_X")[i, j])]
                        + [float(res.col(f"X.{f.name}")[i, j]) for f in fs]
                        + [int(res.count(c)[i]) for c in ledger])
    path = st.path("super")
    write_csv(path, header, rows)
    svg = sidecar(path, ".svg")
    plot_band(svg, times, {"W_X": _mean_se(res.col("W_X"))}, "mean", f"{mode} mode, {card.name}")
    _finish(st, path, {"command": "super run", "card": card.name, "mode": mode, "m": m, "eps": eps,
                       "times": times.tolist(), "replicas": st.replicas}, [svg])
    return 0


def cmd_spine(st, ns):
    from .spine import lp_bound_estimate, run_spines

    card = st.card
    T = st.get("T", 10.0)
    p = st.get("p", 1.5)
    traces = run_spines(card, [(0.0, 1.0)], T, st.replicas, st.seed, dt=ns.dt, p=p)
    sup, curve = lp_bound_estimate(traces, card, p)
    path = st.path("spine")
    write_csv(path, ["t", "mean", "se"], zip(curve.t, curve.mean, curve.se))
    svg = sidecar(path, ".svg")
    plot_band(svg, curve.t, {f"E[S^(p-1)], p={p:g}": (curve.mean, curve.se)}, "moment", card.name)
    print(f"sup={sup:.6g} tail slope={curve.slope:.3g} (z={curve.slope_z:+.2f})")
    _finish(st, path, {"command": "spine run", "card": card.name, "p": p, "T": T, "replicas": st.replicas}, [svg])
    return 0


def cmd_verify(st, ns):
    from . import diagnostics as dg

    card = st.card
    mu = [(0.0, 1.0)]
    T = st.get("T", None)
    m = st.get("m", 0.01)
    eps = st.get("eps", 0.05)
    fs = st.functions(card)
    f = fs[0]
    R, seed, jobs = st.replicas, st.seed, st.jobs
    check = ns.check
    reports = []
    if check == "mto":
        reports += list(dg.check_many_to_one(card, f, mu, T or 1.0, R, seed, m=m, jobs=jobs))
    elif check == "variance":
        reports.append(dg.check_variance(card, f, mu, T or 1.0, R, seed, m=m, jobs=jobs))
    elif check == "laplace":
        mode = "composed" if st.get("mode", "direct") == "skeleton" else "direct"
        reports.append(dg.check_laplace(card, f, mu, T or 1.0, R, seed, mode=mode, m=m, eps=eps, jobs=jobs))
    elif check == "slln":
        grid = st.times(T or 8.0) if getattr(ns, "times", None) else np.array([2.0, 4.0, 6.0, 8.0]) * (T or 8.0) / 8.0
        reps, _ = dg.slln_curve(card, f, mu, grid, R, seed, m=st.get("m", 0.05), eps=eps, jobs=jobs)
        reports += reps
    elif check == "extinction":
        reports += dg.extinction_frequency(card, mu, T or 15.0, R, seed, m=m, jobs=jobs)
    elif check == "ergodic":
        thr = 0.05 if card.motion.domain == "interval" else 0.03
        reports.append(dg.ergodic_occupation(card, T=T or 50.0, replicas=R, seed=seed, threshold=thr))
    elif check == "martingale":
        from .engine import EngineSetup, simulate

        times = st.times(T or 4.0) if getattr(ns, "times", None) else np.array([1.0, 2.0, 4.0]) * (T or 4.0) / 4.0
        res = simulate(EngineSetup(card, "composed", m=st.get("m", 0.05), eps=eps), mu, times, R, seed, jobs)
        phi_mu = float(card.eigen.phi(np.zeros(card.motion.dim)))
        for col in ("W_X", "W_Z"):
            reports += dg.martingale_means(times, res.col(col), phi_mu, col)
            reports.append(dg.martingale_flatness(times, res.col(col), col))
    path = st.path(f"verify_{check}")
    rows = [r.row() for r in reports]
    header = ["check", "estimate", "se", "oracle", "z", "metric", "threshold", "verdict", "note"]
    write_csv(path, header, ([r[k] for k in header] for r in rows))
    for r in reports:
        print(r.line())
    _finish(st, path, {"command": f"verify {check}", "card": card.name, "replicas": R, "T": T})
    failed = [r for r in reports if not r.passed]
    return 1 if (st.strict and failed) else 0


COMMANDS = {"catalog": cmd_catalog, "mech": cmd_mech, "mild": cmd_mild, "skeleton": cmd_skeleton,
            "super": cmd_super, "spine": cmd_spine, "verify": cmd_verify}


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    try:
        st = _Settings(ns)
        return COMMANDS[ns.command](st, ns)
    except (SkelsimError, KeyError, ValueError) as exc:
        print(f"skelsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
