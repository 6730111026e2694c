"""Counter-based per-replica random streams.

Each replica owns one xoroshiro128+ state per named stream.  States are
derived from ``SeedSequence(seed, spawn_key=(replica, stream))`` so a
replica's draws do not depend on how replicas are scheduled.
"""
from __future__ import annotations

import numpy as np
from numba import njit

STREAMS = ("motion", "branching", "imm-a", "imm-b", "imm-c")
MOTION, BRANCHING, IMM_A, IMM_B, IMM_C = range(5)

_U11 = np.uint64(11)
_U16 = np.uint64(16)
_U24 = np.uint64(24)
_U37 = np.uint64(37)
_U40 = np.uint64(40)
_U27 = np.uint64(27)
_INV53 = 1.0 / 9007199254740992.0


def replica_states(seed: int, replicas, n_streams: int = len(STREAMS)) -> np.ndarray:
    """uint64 array (len(replicas), n_streams, 2) of nonzero generator states."""
    replicas = np.atleast_1d(np.asarray(replicas, dtype=np.int64))
    out = np.empty((replicas.size, n_streams, 2), dtype=np.uint64)
    for i, r in enumerate(replicas):
        for s in range(n_streams):
            st = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(r), s)).generate_state(2, np.uint64)
            if st[0] == 0 and st[1] == 0:
                st[0] = np.uint64(0x9E3779B97F4A7C15)
            out[i, s] = st
    return out


def numpy_generator(seed: int, replica: int, stream: int) -> np.random.Generator:
    """A numpy Generator on the same (seed, replica, stream) key, for Python-side samplers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1),
                                                                      spawn_key=(int(replica), 100 + stream))))


@njit(inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (np.uint64(64) - k))


@njit
def next_u64(st, i):
    s0 = st[i, 0]
    s1 = st[i, 1]
    r = s0 + s1
    s1 ^= s0
    st[i, 0] = _rotl(s0, _U24) ^ s1 ^ (s1 << _U16)
    st[i, 1] = _rotl(s1, _U37)
    return r


@njit
def uniform(st, i):
    """Uniform on [0, 1)."""
    return float(next_u64(st, i) >> _U11) * _INV53


@njit
def uniform_pos(st, i):
    """Uniform on (0, 1]."""
    return 1.0 - uniform(st, i)


@njit
def exponential(st, i):
    return -np.log(uniform_pos(st, i))


@njit
def normal_pair(st, i):
    """Two independent standard normals (Marsaglia polar method)."""
    while True:
        a = 2.0 * uniform(st, i) - 1.0
        b = 2.0 * uniform(st, i) - 1.0
        s = a * a + b * b
        if 0.0 < s < 1.0:
            f = np.sqrt(-2.0 * np.log(s) / s)
            return a * f, b * f


@njit
def poisson(st, i, lam):
    """Poisson by multiplication, splitting large means into chunks of 16."""
    n = 0
    while lam > 0:
        mu = min(lam, 16.0)
        lam -= mu
        L = np.exp(-mu)
        p = uniform_pos(st, i)
        while p > L:
            n += 1
            p *= uniform_pos(st, i)
    return n


@njit
def gamma_sample(st, i, shape):
    """Gamma(shape, 1) by Marsaglia-Tsang (with the U^(1/shape) boost below 1)."""
    boost = 1.0
    if shape < 1.0:
        boost = uniform_pos(st, i) ** (1.0 / shape)
        shape += 1.0
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        x, _ = normal_pair(st, i)
        v = 1.0 + c * x
        if v <= 0:
            continue
        v = v * v * v
        u = uniform_pos(st, i)
        if np.log(u) < 0.5 * x * x + d - d * v + d * np.log(v):
            return d * v * boost


@njit
def stochastic_round(st, i, v):
    n = int(np.floor(v))
    if uniform(st, i) < v - n:
        n += 1
    return n
