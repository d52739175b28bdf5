"""Bound states of symmetric double wells.

The square double well is solved by matching: the even and odd transcendental
conditions are scanned for sign changes on a fine wavenumber grid, and each
bracket is refined by Brent's method. Smooth potentials use Numerov shooting
from both ends of a finite grid, with eigenvalue brackets isolated by node
counting and refined on the discrete Wronskian at the right-well minimum.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numba as nb
import numpy as np
from scipy.optimize import brentq

from .errors import (BracketingError, DomainError, GridTooSmallError, MatchingError,
                     NoDoubletError, OrderingError)
from .potentials import RosenMorseDouble, SquareDoubleWell, rm_derived_geometry, turning_points
from .units import UnitSystem


class Parity(str, enum.Enum):
    EVEN = "even"
    ODD = "odd"


class Level(enum.IntEnum):
    """Requested state, numbered by node count."""

    GROUND = 0
    FIRST_EXCITED = 1
    SECOND_PAIR_LOWER = 2
    SECOND_PAIR_UPPER = 3


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class BoundState:
    """Normalized stationary state sampled on a uniform grid.

    ``norm_check`` holds the trapezoid integral of |psi|^2 before
    normalization. ``wavenumber`` and ``kappa`` are set for square-well
    states only.
    """

    energy: float
    grid: np.ndarray
    psi: np.ndarray
    parity: Parity
    norm_check: float
    units: UnitSystem
    potential: Optional[Callable] = None
    wavenumber: Optional[float] = None
    kappa: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "grid", _frozen(self.grid))
        object.__setattr__(self, "psi", _frozen(self.psi))

    @property
    def density(self) -> np.ndarray:
        return self.psi**2

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def nodes(self) -> int:
        """Sign changes of psi, ignoring samples below 1e-10 of the maximum."""
        tol = 1e-10 * np.max(np.abs(self.psi))
        s = np.sign(self.psi[np.abs(self.psi) > tol])
        return int(np.count_nonzero(s[1:] != s[:-1]))

    def to_csv(self, path, header: Optional[str] = None) -> None:
        """Write columns x, psi, V(x), after an optional comment header."""
        pot = self.potential
        v = np.full_like(self.grid, np.nan)
        if pot is not None:
            inside = np.ones_like(self.grid, dtype=bool)
            if isinstance(pot, SquareDoubleWell):
                inside = np.abs(self.grid) < 0.5 * pot.b
            v[inside] = pot(self.grid[inside])
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header)
            w = csv.writer(fh)
            w.writerow(["x", "psi", "V"])
            for row in zip(self.grid, self.psi, v):
                w.writerow([f"{val:.17g}" for val in row])


@dataclass(frozen=True)
class SpectrumPair:
    """Doublet energies, splitting and the two-state oscillation period."""

    e0: float
    e1: float
    delta_e: float
    period: float


def spectrum_pair(e0: float, e1: float, units: UnitSystem) -> SpectrumPair:
    if not e1 > e0:
        raise OrderingError(f"need e1 > e0, got e0={e0}, e1={e1}")
    delta = e1 - e0
    return SpectrumPair(e0, e1, delta, 2.0 * math.pi * units.hbar / delta)


# ---------------------------------------------------------------------------
# square double well


@dataclass(frozen=True)
class SquareLevels:
    k_even: float
    k_odd: float


def _k0(well: SquareDoubleWell, units: UnitSystem) -> float:
    return math.sqrt(2.0 * units.mass * well.V0) / units.hbar


def even_condition(k, well: SquareDoubleWell, units: UnitSystem):
    """k cot(kL) + kappa tanh(kappa d / 2)."""
    kap = np.sqrt(_k0(well, units) ** 2 - np.square(k))
    return k / np.tan(k * well.L) + kap * np.tanh(0.5 * kap * well.d)


def odd_condition(k, well: SquareDoubleWell, units: UnitSystem):
    """kappa tan(kL) + k tanh(kappa d / 2)."""
    kap = np.sqrt(_k0(well, units) ** 2 - np.square(k))
    return kap * np.tan(k * well.L) + k * np.tanh(0.5 * kap * well.d)


def _lowest_root(fn, lo, hi, n_scan=10_000, tol=1e-12):
    ks = np.linspace(lo, hi, n_scan)
    with np.errstate(divide="ignore", invalid="ignore"):
        fs = fn(ks)
    for i in np.nonzero(np.sign(fs[:-1]) * np.sign(fs[1:]) < 0)[0]:
        root = brentq(fn, ks[i], ks[i + 1], xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)
        # a sign change across a pole of tan/cot leaves a huge residual
        if abs(fn(root)) <= tol:
            return root
    return None


def ground_wavenumber(well: SquareDoubleWell, units: Optional[UnitSystem] = None) -> float:
    """Lowest root of the even matching condition with E < V0."""
    units = units or UnitSystem.dimensionless()
    k0 = _k0(well, units)
    hi = min(k0, math.pi / well.L) * (1.0 - 1e-12)
    root = _lowest_root(lambda k: even_condition(k, well, units), 1e-12 * hi, hi)
    if root is None:
        raise NoDoubletError("no even level below the barrier top")
    return root


def solve_square_levels(well: SquareDoubleWell, units: Optional[UnitSystem] = None) -> SquareLevels:
    """Lowest even and odd wavenumbers below the barrier top."""
    units = units or UnitSystem.dimensionless()
    k0 = _k0(well, units)
    hi = min(k0, math.pi / well.L) * (1.0 - 1e-12)
    k_even = _lowest_root(lambda k: even_condition(k, well, units), 1e-12 * hi, hi)
    k_odd = _lowest_root(lambda k: odd_condition(k, well, units), 1e-12 * hi, hi)
    if k_even is None or k_odd is None:
        raise NoDoubletError("no sub-barrier doublet for this well")
    return SquareLevels(k_even, k_odd)


def square_wavefunction(x, well: SquareDoubleWell, k: float, parity: Parity, units: UnitSystem):
    """Unnormalized piecewise solution with unit amplitude in the wells."""
    x = np.asarray(x, dtype=float)
    kap = math.sqrt(_k0(well, units) ** 2 - k * k)
    half_b, half_d, L = 0.5 * well.b, 0.5 * well.d, well.L
    left = np.sin(k * (x + half_b))
    if parity is Parity.EVEN:
        mid = math.sin(k * L) / math.cosh(kap * half_d) * np.cosh(kap * x)
        right = -np.sin(k * (x - half_b))
    else:
        mid = -math.sin(k * L) / math.sinh(kap * half_d) * np.sinh(kap * x)
        right = np.sin(k * (x - half_b))
    return np.where(x <= -half_d, left, np.where(x < half_d, mid, right))


def square_bound_state(well: SquareDoubleWell, k: float, parity: Parity | str,
                       units: Optional[UnitSystem] = None, n_points: int = 12001) -> BoundState:
    """Sample the matched square-well eigenfunction on [-b/2, b/2]."""
    units = units or UnitSystem.dimensionless()
    parity = Parity(parity)
    cond = even_condition if parity is Parity.EVEN else odd_condition
    residual = float(cond(k, well, units))
    kap = math.sqrt(_k0(well, units) ** 2 - k * k)
    half_d = 0.5 * well.d
    # value and slope of each branch at the barrier edge +d/2
    if parity is Parity.EVEN:
        c = math.sin(k * well.L) / math.cosh(kap * half_d)
        inner = (c * math.cosh(kap * half_d), c * kap * math.sinh(kap * half_d))
        outer = (math.sin(k * well.L), -k * math.cos(k * well.L))
    else:
        c = -math.sin(k * well.L) / math.sinh(kap * half_d)
        inner = (c * math.sinh(kap * half_d), c * kap * math.cosh(kap * half_d))
        outer = (-math.sin(k * well.L), k * math.cos(k * well.L))
    scale = max(abs(outer[1]), k)
    jump = abs(inner[1] - outer[1]) / scale
    if abs(residual) > 1e-10 or jump > 1e-8:
        raise MatchingError(f"k={k} does not satisfy the {parity.value} matching condition", jump=jump)

    x = np.linspace(-0.5 * well.b, 0.5 * well.b, n_points)
    psi = square_wavefunction(x, well, k, parity, units)
    psi[0] = psi[-1] = 0.0
    norm = float(np.trapezoid(psi**2, x))
    psi = psi / math.sqrt(norm)
    if psi[np.argmax(np.abs(psi))] < 0:
        psi = -psi
    return BoundState(
        energy=units.kinetic * k * k,
        grid=x,
        psi=psi,
        parity=parity,
        norm_check=norm,
        units=units,
        potential=well,
        wavenumber=k,
        kappa=kap,
    )


# ---------------------------------------------------------------------------
# Numerov shooting


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    n_points: int = 8001

    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)


@nb.njit(cache=True)
def _count_nodes(v, energy, h2c):
    """Sign changes of the left-started solution up to and including the last point."""
    n = v.shape[0]
    w_prev = 1.0 - h2c * (v[0] - energy) / 12.0
    w_cur = 1.0 - h2c * (v[1] - energy) / 12.0
    p_prev = 0.0
    p_cur = 1e-30
    nodes = 0
    for i in range(1, n - 1):
        w_next = 1.0 - h2c * (v[i + 1] - energy) / 12.0
        p_next = ((12.0 - 10.0 * w_cur) * p_cur - w_prev * p_prev) / w_next
        if p_next == 0.0 or (p_next > 0.0) != (p_cur > 0.0):
            nodes += 1
        a = abs(p_next)
        if a > 1e150:
            p_next /= a
            p_cur /= a
        p_prev, p_cur = p_cur, p_next
        w_prev, w_cur = w_cur, w_next
    return nodes


@nb.njit(cache=True)
def _shoot(v, energy, h2c, start, stop):
    """Integrate from ``start`` (psi=0) towards ``stop`` inclusive; returns a full-length array."""
    n = v.shape[0]
    psi = np.zeros(n)
    step = 1 if stop > start else -1
    psi[start + step] = 1e-30
    i = start + step
    w_prev = 1.0 - h2c * (v[start] - energy) / 12.0
    w_cur = 1.0 - h2c * (v[i] - energy) / 12.0
    while i != stop:
        j = i + step
        w_next = 1.0 - h2c * (v[j] - energy) / 12.0
        psi[j] = ((12.0 - 10.0 * w_cur) * psi[i] - w_prev * psi[i - step]) / w_next
        a = abs(psi[j])
        if a > 1e150:
            if step > 0:
                psi[start:j + 1] /= a
            else:
                psi[j:start + 1] /= a
        w_prev, w_cur = w_cur, w_next
        i = j
    return psi


@nb.njit(cache=True)
def _wronskian(v, energy, h2c, m):
    n = v.shape[0]
    left = _shoot(v, energy, h2c, 0, m + 1)
    right = _shoot(v, energy, h2c, n - 1, m)
    sl = np.max(np.abs(left[: m + 2]))
    sr = np.max(np.abs(right[m:]))
    wm = 1.0 - h2c * (v[m] - energy) / 12.0
    wp = 1.0 - h2c * (v[m + 1] - energy) / 12.0
    return (wm * left[m] * wp * right[m + 1] - wp * left[m + 1] * wm * right[m]) / (sl * sr)


def _match_index(x: np.ndarray, v: np.ndarray) -> int:
    """Right-well minimum for symmetric potentials, else the global minimum."""
    symmetric = abs(x[0] + x[-1]) < 1e-9 * (x[-1] - x[0]) and np.allclose(v, v[::-1], rtol=1e-9, atol=1e-12)
    if symmetric:
        half = len(x) // 2
        m = half + int(np.argmin(v[half:]))
    else:
        m = int(np.argmin(v))
    return int(min(max(m, 2), len(x) - 3))


def default_grid(potential, units: UnitSystem, n_points: int = 8001, tail: float = 20.0) -> GridSpec:
    """Symmetric grid whose evanescent margins decay by at least exp(-tail).

    The margin beyond the outer turning point at the barrier-top energy is
    the larger of six asymptotic decay lengths and the distance at which the
    WKB attenuation integral reaches ``tail``.
    """
    if isinstance(potential, SquareDoubleWell):
        return GridSpec(-0.5 * potential.b, 0.5 * potential.b, n_points)
    if not isinstance(potential, RosenMorseDouble):
        raise DomainError("default grids are defined for the built-in potential families")
    geo = rm_derived_geometry(potential)
    v_top = potential(0.0)
    x0 = geo["x0"]
    e_ref = v_top - 1e-9 * abs(v_top)
    c = turning_points(potential, e_ref).c_outer
    decay = units.hbar / math.sqrt(2.0 * units.mass * (potential.A - e_ref))
    dx = decay / 50.0
    xx, acc = c, 0.0
    while acc < tail:
        xx += dx
        acc += math.sqrt(max(2.0 * units.mass * (potential(xx) - e_ref), 0.0)) / units.hbar * dx
        if xx > c + 1e4 * potential.d:
            raise GridTooSmallError("potential does not confine the state")
    half = max(xx, c + 6.0 * decay, x0 + 6.0 * decay)
    return GridSpec(-half, half, n_points)


def _isolate(v, h2c, n_nodes, e_lo, e_hi):
    """Shrink [e_lo, e_hi] until it holds exactly the state with ``n_nodes`` nodes."""
    span = max(e_hi - e_lo, 1.0)
    while _count_nodes(v, e_hi, h2c) < n_nodes + 1:
        span *= 2.0
        e_hi = e_lo + span
        if span > 1e12:
            raise BracketingError("could not find an upper energy bracket")
    lo, hi = e_lo, e_hi
    for _ in range(400):
        n_lo = _count_nodes(v, lo, h2c)
        n_hi = _count_nodes(v, hi, h2c)
        if n_lo == n_nodes and n_hi == n_nodes + 1:
            return lo, hi
        mid = 0.5 * (lo + hi)
        if _count_nodes(v, mid, h2c) <= n_nodes:
            lo = mid
        else:
            hi = mid
    raise BracketingError(f"node counting did not isolate the state with {n_nodes} nodes")


def numerov_bound_state(potential: Callable, units: UnitSystem, which: int | Level = Level.GROUND,
                        grid: Optional[GridSpec] = None, hard_walls: bool = False) -> BoundState:
    """Eigenstate with ``which`` nodes on a finite grid with psi = 0 at both ends.

    ``hard_walls`` treats the grid ends as physical walls and skips the
    evanescent-tail check.
    """
    n_nodes = int(which)
    if grid is None:
        grid = default_grid(potential, units)
    x = grid.points()
    h = x[1] - x[0]
    v = np.asarray(potential(x), dtype=float)
    c = 2.0 * units.mass / units.hbar**2
    h2c = h * h * c

    e_lo = float(np.min(v))
    e_hi = float(np.max(v))
    if e_hi <= e_lo:
        e_hi = e_lo + units.kinetic * (math.pi * (n_nodes + 1) / (x[-1] - x[0])) ** 2 * 2.0
    lo, hi = _isolate(v, h2c, n_nodes, e_lo, e_hi)
    if h2c * np.max(np.abs(v - hi)) >= 0.1:
        raise DomainError("grid spacing too coarse for Numerov: h^2 max|2m(V-E)|/hbar^2 >= 0.1")

    m = _match_index(x, v)
    f = lambda e: _wronskian(v, e, h2c, m)
    f_lo, f_hi = f(lo), f(hi)
    if f_lo * f_hi > 0:
        # fall back on the sign of the end value of the one-sided shot
        g = lambda e: _count_nodes(v, e, h2c) - n_nodes - 0.5
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) < 0:
                lo = mid
            else:
                hi = mid
        energy = 0.5 * (lo + hi)
    else:
        energy = brentq(f, lo, hi, xtol=1e-13 * max(1.0, abs(lo)), rtol=4 * np.finfo(float).eps, maxiter=500)

    n = len(x)
    left = _shoot(v, energy, h2c, 0, m + 1)
    right = _shoot(v, energy, h2c, n - 1, m)
    # both solutions are proportional on {m, m+1}; this survives a node at m
    ratio = (left[m] * right[m] + left[m + 1] * right[m + 1]) / (right[m] ** 2 + right[m + 1] ** 2)
    psi = np.concatenate([left[:m], right[m:] * ratio])
    if not np.all(np.isfinite(psi)):
        raise BracketingError("non-finite wavefunction")
    norm = float(np.trapezoid(psi**2, x))
    psi = psi / math.sqrt(norm)
    if psi[np.argmax(np.abs(psi))] < 0:
        psi = -psi

    peak = np.max(np.abs(psi))
    if not hard_walls and max(abs(psi[1]), abs(psi[-2])) > 1e-8 * peak:
        raise GridTooSmallError("wavefunction tails have not decayed at the grid edges")
    state = BoundState(
        energy=float(energy),
        grid=x,
        psi=psi,
        parity=Parity.EVEN if n_nodes % 2 == 0 else Parity.ODD,
        norm_check=norm,
        units=units,
        potential=potential,
    )
    if state.nodes != n_nodes:
        raise BracketingError(f"converged state has {state.nodes} nodes, expected {n_nodes}")
    return state


def numerov_levels(potential: Callable, units: UnitSystem, n_states: int = 2,
                   grid: Optional[GridSpec] = None, hard_walls: bool = False) -> np.ndarray:
    """Lowest ``n_states`` eigenvalues without building the eigenfunctions."""
    if grid is None:
        grid = default_grid(potential, units)
    x = grid.points()
    h = x[1] - x[0]
    v = np.asarray(potential(x), dtype=float)
    h2c = h * h * 2.0 * units.mass / units.hbar**2
    m = _match_index(x, v)
    e_lo = float(np.min(v))
    e_hi = max(float(np.max(v)), e_lo + 1.0)
    out = []
    for n_nodes in range(n_states):
        lo, hi = _isolate(v, h2c, n_nodes, e_lo, e_hi)
        f = lambda e: _wronskian(v, e, h2c, m)
        if f(lo) * f(hi) > 0:
            raise BracketingError("Wronskian does not change sign over the isolated bracket")
        out.append(brentq(f, lo, hi, xtol=1e-13 * max(1.0, abs(lo)), rtol=4 * np.finfo(float).eps, maxiter=500))
        e_lo = lo
    return np.array(out)


def energy_expectation(state: BoundState, potential: Optional[Callable] = None) -> float:
    """<psi|H|psi> using fourth-order differences for psi' and the trapezoid rule."""
    pot = potential or state.potential
    x, psi = state.grid, state.psi
    h = state.spacing
    dpsi = np.empty_like(psi)
    dpsi[2:-2] = (psi[:-4] - 8 * psi[1:-3] + 8 * psi[3:-1] - psi[4:]) / (12 * h)
    dpsi[:2] = np.gradient(psi, h, edge_order=2)[:2]
    dpsi[-2:] = np.gradient(psi, h, edge_order=2)[-2:]
    if isinstance(pot, SquareDoubleWell):
        inner = slice(1, -1)
        v = np.zeros_like(x)
        v[inner] = pot(x[inner])
    else:
        v = np.asarray(pot(x), dtype=float)
    kinetic = state.units.kinetic * np.trapezoid(dpsi**2, x)
    potential_term = np.trapezoid(v * psi**2, x)
    return float((kinetic + potential_term) / np.trapezoid(psi**2, x))
