"""Counter-based Gaussian noise for the compiled steppers.

Uniform 64-bit words are SplitMix64 outputs of ``key + n * GAMMA`` where
``key`` is derived from (seed, trajectory_id) through numpy's SeedSequence
and ``n`` counts the words drawn so far. A stream is therefore fully
described by one integer, and trajectory ``i`` of a run never depends on
any other trajectory. Normals use a 256-layer ziggurat on 52-bit mantissas.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_S8, _S11, _S1 = np.uint64(8), np.uint64(11), np.uint64(1)
_MASK8 = np.uint64(0xFF)
_MASK52 = np.uint64((1 << 52) - 1)
_TO_UNIT = 1.0 / (1 << 53)


def _ziggurat_tables(n: int = 256, r: float = 3.6541528853610088, v: float = 0.00492867323399):
    """Acceptance thresholds k_i, widths w_i and f(x_i) of the ziggurat layers.

    Layer 1 is the narrowest (top) box and widths grow to x_{n-1} = r;
    layer 0 is the base strip of width v / f(r), which also carries the tail.
    """
    f = lambda t: math.exp(-0.5 * t * t)  # noqa: E731
    x = np.empty(n)
    x[n - 1] = r
    for i in range(n - 1, 1, -1):
        x[i - 1] = math.sqrt(-2.0 * math.log(v / x[i] + f(x[i])))
    x[0] = v / f(r)
    scale = float(1 << 52)
    ki = np.zeros(n, dtype=np.uint64)
    ki[0] = np.uint64(int(r / x[0] * scale))
    for i in range(2, n):
        ki[i] = np.uint64(int(x[i - 1] / x[i] * scale))
    wi = x / scale
    fi = np.array([1.0] + [f(t) for t in x[1:]])
    return ki, wi, fi, r


_KI, _WI, _FI, _R = _ziggurat_tables()
_INV_R = 1.0 / _R


@nb.njit(cache=True, inline="always")
def _next(state):
    state = state + GAMMA
    z = state
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return state, z ^ (z >> _S31)


@nb.njit(cache=True, inline="always")
def _uniform(state):
    state, z = _next(state)
    return state, ((z >> _S11) + np.uint64(1)) * _TO_UNIT  # in (0, 1]


@nb.njit(cache=True)
def _normal_slow(state, idx, rabs, x):
    while True:
        if idx == 0:
            while True:
                state, u1 = _uniform(state)
                state, u2 = _uniform(state)
                xx = -_INV_R * math.log(u1)
                yy = -math.log(u2)
                if yy + yy > xx * xx:
                    return state, (-(_R + xx) if (rabs >> _S8) & _S1 else _R + xx)
        else:
            state, u = _uniform(state)
            if (_FI[idx - 1] - _FI[idx]) * u + _FI[idx] < math.exp(-0.5 * x * x):
                return state, x
        state, r = _next(state)
        idx = r & _MASK8
        r = r >> _S8
        sign = r & _S1
        rabs = (r >> _S1) & _MASK52
        x = rabs * _WI[idx]
        if sign:
            x = -x
        if rabs < _KI[idx]:
            return state, x


@nb.njit(cache=True, inline="always")
def normal(state):
    """One standard normal; returns the advanced state and the variate."""
    state, r = _next(state)
    idx = r & _MASK8
    r = r >> _S8
    sign = r & _S1
    rabs = (r >> _S1) & _MASK52
    x = rabs * _WI[idx]
    if sign:
        x = -x
    if rabs < _KI[idx]:
        return state, x
    return _normal_slow(state, idx, rabs, x)


@nb.njit(cache=True)
def _fill(state, out):
    for i in range(out.size):
        state, out[i] = normal(state)
    return state


def stream_key(seed: int, trajectory_id: int) -> np.uint64:
    """Starting state of the stream for (seed, trajectory_id)."""
    ss = np.random.SeedSequence([int(seed), int(trajectory_id)])
    return ss.generate_state(1, dtype=np.uint64)[0]


def normals(seed: int, trajectory_id: int, n: int) -> np.ndarray:
    """First ``n`` variates of a trajectory's stream (for inspection and tests)."""
    out = np.empty(n)
    _fill(stream_key(seed, trajectory_id), out)
    return out
