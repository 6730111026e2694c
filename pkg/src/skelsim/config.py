"""Run configuration files.

Format: ``[section]`` headers and ``key = value`` lines; ``#`` starts a
comment.  Sections are ``[mechanism]`` and ``[motion]`` (parameters passed
to the card builder), ``[run]`` and ``[functions]`` (one test function per
key, e.g. ``f1 = indicator -1 1``).  Every error names its line.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import ExampleCard, get_card
from .errors import ConfigError
from .mechanism import LevyKernel
from .functions import Indicator, Poly1D, Profile, SpatialFunction

__all__ = ["RunConfig", "parse_config", "parse_text", "make_function", "resolve_function", "check_ratio_bounded"]

_MECH_KEYS = {"beta": float, "alpha": float, "pi.family": str, "pi.a": float, "pi.b": float, "pi.c": float,
              "pi.modulation": str}
_MOTION_KEYS = {"kind": str, "gamma": float, "d": int, "dim": int, "dt": float}
# motion kind -> default card when [run] names none
_KINDS = {"ou-inward": "inward-ou-quadratic", "ou-outward": "outward-ou-quadratic",
          "wright-fisher": "wright-fisher", "brownian-drift": "nonsymmetric-compact-drift"}
_PI_FAMILIES = {"zero": "zero", "tempered-power-law": "tempered", "tempered": "tempered"}
_RUN_KEYS = {
    "card": str, "T": float, "dt": float, "m": float, "eps": float, "replicas": int, "seed": int,
    "mode": str, "times": "floats", "p": float, "jobs": int, "out": str,
}
_SECTIONS = ("mechanism", "motion", "run", "functions")
_POSITIVE = ("T", "dt", "m", "eps", "replicas", "p", "jobs")


@dataclass
class RunConfig:
    card_name: str = "inward-ou-quadratic"
    params: dict = field(default_factory=dict)
    T: float = 1.0
    dt: float = 0.01
    m: float = 0.01
    eps: float = 0.05
    replicas: int = 1000
    seed: int = 0
    mode: str = "direct"
    times: tuple = ()
    p: float = 1.5
    jobs: int | None = None
    out: str | None = None
    functions: tuple = ()
    source: str = ""

    @property
    def card(self) -> ExampleCard:
        return get_card(self.card_name, **self.params)

    @property
    def snapshot_times(self) -> np.ndarray:
        return np.asarray(self.times if self.times else (self.T,), float)

    def echo(self) -> dict:
        return {
            "card": self.card_name, "params": {k: v.describe() if hasattr(v, "describe") else v for k, v in self.params.items()}, "T": self.T, "dt": self.dt, "m": self.m,
            "eps": self.eps, "replicas": self.replicas, "seed": self.seed, "mode": self.mode,
            "times": list(self.times), "p": self.p,
            "functions": [getattr(f, "name", str(f)) for f in self.functions],
        }


def make_function(spec: str, name: str | None = None) -> SpatialFunction:
    """Test function from a family name and numbers.

    ``indicator lo hi``, ``gaussian-bump amp [k]`` (amp exp(-k |x|^2), k = 1
    by default), ``phi`` (the card's ground state, resolved later),
    ``constant c`` and ``poly c0 c1 ...``.
    """
    parts = spec.split()
    if not parts:
        raise ValueError("empty function spec")
    fam, nums = parts[0].lower(), parts[1:]
    try:
        vals = [float(v) for v in nums]
    except ValueError as exc:
        raise ValueError(f"non-numeric parameter in {spec!r}") from exc
    label = name or fam
    if fam == "indicator":
        if len(vals) != 2 or not vals[0] < vals[1]:
            raise ValueError("indicator needs lo < hi")
        return Indicator(vals[0], vals[1], name=label)
    if fam in ("gaussian-bump", "gaussian", "bump"):
        if len(vals) not in (1, 2):
            raise ValueError("gaussian-bump needs amp [k]")
        k = vals[1] if len(vals) == 2 else 1.0
        return Profile(((vals[0], 0.0, 0.0, -abs(k)),), label)
    if fam == "phi":
        if vals:
            raise ValueError("phi takes no parameters")
        return _PhiPlaceholder(label if name else "phi")
    if fam == "constant":
        if len(vals) != 1:
            raise ValueError("constant needs one value")
        return Profile(((vals[0], 0.0, 0.0, 0.0),), label)
    if fam == "poly":
        if not vals:
            raise ValueError("poly needs coefficients")
        return Poly1D(tuple(vals), name=label)
    raise ValueError(f"unknown function family {fam!r}")


@dataclass(frozen=True)
class _PhiPlaceholder(SpatialFunction):
    name: str = "phi"

    def __call__(self, x):
        raise RuntimeError("phi placeholder must be resolved against a card")


def resolve_function(f, card: ExampleCard):
    """Replace a ``phi`` placeholder by the card's ground state."""
    if isinstance(f, _PhiPlaceholder):
        phi = card.eigen.phi
        if isinstance(phi, Profile):
            return Profile(phi.terms, f.name)
        return phi
    return f


def check_ratio_bounded(f, card: ExampleCard, levels=(2.0, 4.0, 8.0, 16.0), growth: float = 1.25) -> bool:
    """Heuristic check that f/phi stays bounded: its supremum must level off on wider grids."""
    motion = card.motion
    sups = []
    for L in levels:
        pts = motion.sample_grid(801, half_width=L)
        with np.errstate(all="ignore"):
            r = np.abs(np.asarray(f(pts), float) / np.asarray(card.eigen.phi(pts), float))
        if not np.all(np.isfinite(r)):
            return False
        sups.append(float(np.max(r)))
        if motion.domain == "interval":
            break
    if len(sups) > 1 and sups[-1] > growth * sups[-2]:
        return False
    return sups[-1] < 1e12


def _convert(kind, raw, key, line):
    try:
        if kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if kind is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected {getattr(kind, '__name__', kind)}, got {raw!r}", line) from None


def _card_kind(name: str) -> str:
    if name.startswith("inward-ou") or name in ("unbounded-w", "unbounded-beta"):
        return "ou-inward"
    if name.startswith("outward-ou"):
        return "ou-outward"
    return {"wright-fisher": "wright-fisher", "nonsymmetric-compact-drift": "brownian-drift"}.get(name, "")


def _build_pi(pi: dict) -> LevyKernel:
    first = min(ln for _, ln in pi.values())
    fam = _PI_FAMILIES[pi.get("family", ("tempered-power-law", first))[0]]
    if fam == "zero":
        return LevyKernel.zero()
    kw = {k: v for k, (v, _) in pi.items() if k in ("a", "b", "c")}
    try:
        return LevyKernel("tempered", **kw)
    except ValueError as exc:
        raise ConfigError(f"jump kernel: {exc}", first) from None


def parse_text(text: str, source: str = "<string>") -> RunConfig:
    cfg = RunConfig(source=source)
    section = None
    funcs = []
    seen = set()
    required_run = {"card"}
    kind = None
    pi = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", ln)
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", ln)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", ln)
        if section is None:
            raise ConfigError("key outside of any section", ln)
        key, val = (s.strip() for s in line.split("=", 1))
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r}", ln)
        seen.add((section, key))
        if section == "functions":
            try:
                funcs.append((make_function(val, key), ln))
            except ValueError as exc:
                raise ConfigError(f"function {key!r}: {exc}", ln) from None
            continue
        table = {"mechanism": _MECH_KEYS, "motion": _MOTION_KEYS, "run": _RUN_KEYS}[section]
        if key not in table:
            raise ConfigError(f"unknown key {key!r} in [{section}]", ln)
        v = _convert(table[key], val, key, ln)
        if section in ("mechanism", "motion"):
            if section == "motion" and key == "gamma" and v == 0:
                raise ConfigError("gamma must be nonzero for catalog OU cards", ln)
            if key == "kind" and v not in _KINDS:
                raise ConfigError(f"unknown motion kind {v!r}; known: {', '.join(_KINDS)}", ln)
            if key == "pi.family" and v not in _PI_FAMILIES:
                raise ConfigError(f"unknown jump family {v!r}", ln)
            if key == "pi.modulation" and v != "constant":
                raise ConfigError("only constant jump modulation is supported in config files", ln)
            if key == "dt":
                if not v > 0:
                    raise ConfigError("key 'dt' must be positive", ln)
                cfg.dt = v
            elif key == "kind":
                kind = (v, ln)
            elif key.startswith("pi."):
                pi[key[3:]] = (v, ln)
            else:
                cfg.params["d" if key == "dim" else key] = v
            continue
        if key in _POSITIVE and not v > 0:
            raise ConfigError(f"key {key!r} must be positive, got {val}", ln)
        if key == "seed" and not (0 <= v < 2**64):
            raise ConfigError("seed must be a 64-bit nonnegative value", ln)
        if key == "times" and (any(t < 0 for t in v) or list(v) != sorted(v)):
            raise ConfigError("times must be nonnegative and sorted", ln)
        if key == "card":
            cfg.card_name = v
        else:
            setattr(cfg, key, v)
        required_run.discard(key)
    if kind is not None:
        default = _KINDS[kind[0]]
        if "card" in required_run:
            cfg.card_name = default
            required_run.discard("card")
        elif _card_kind(cfg.card_name) != kind[0]:
            raise ConfigError(f"motion kind {kind[0]!r} does not match card {cfg.card_name!r}", kind[1])
    if pi:
        cfg.params["pi"] = _build_pi(pi)
    if required_run:
        raise ConfigError(f"missing required key(s) in [run]: {', '.join(sorted(required_run))}", None)
    try:
        card = cfg.card
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot build card: {exc}", None) from None
    resolved = []
    for f, ln in funcs:
        f = resolve_function(f, card)
        if not check_ratio_bounded(f, card):
            raise ConfigError(f"test function {f.name!r} violates the f/phi bounded requirement", ln)
        resolved.append(f)
    cfg.functions = tuple(resolved)
    return cfg


def parse_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_text(p.read_text(encoding="utf-8"), str(p))
