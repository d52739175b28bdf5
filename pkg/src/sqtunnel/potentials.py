"""Symmetric double-well potentials and their geometry.

Two families are provided: the square double well with infinite outer walls
and the double Rosen-Morse potential used for the ammonia inversion mode.
Both are immutable and evaluate on scalars or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, InfiniteWallError, NoBarrierError
from .units import UnitSystem


@dataclass(frozen=True)
class SquareDoubleWell:
    """Infinite walls at +-b/2 with a barrier of height V0 on |x| < d/2.

    The walls are represented by the finite domain ``[-b/2, b/2]``; points on
    or beyond them are rejected rather than mapped to a large number.
    """

    b: float
    d: float
    V0: float

    has_walls = True

    def __post_init__(self):
        if not (0.0 < self.d < self.b):
            raise DomainError(f"need 0 < d < b, got d={self.d}, b={self.b}")
        if not self.V0 > 0.0:
            raise DomainError(f"barrier height must be positive, got {self.V0}")

    @property
    def L(self) -> float:
        """Width of each well, (b - d) / 2."""
        return 0.5 * (self.b - self.d)

    @property
    def domain(self) -> tuple[float, float]:
        return (-0.5 * self.b, 0.5 * self.b)

    @property
    def barrier_height(self) -> float:
        return self.V0

    @property
    def minimum(self) -> float:
        """Centre of the right well."""
        return 0.25 * (self.b + self.d)

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        if np.any(np.isnan(x_arr)):
            raise DomainError("NaN position")
        if np.any(np.abs(x_arr) >= 0.5 * self.b):
            raise InfiniteWallError(f"position in the infinite-wall region |x| >= {0.5 * self.b}")
        out = np.where(np.abs(x_arr) < 0.5 * self.d, self.V0, 0.0)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"family": "square", "b": self.b, "d": self.d, "V0": self.V0}


def _sech2(y):
    e = np.exp(-2.0 * np.abs(y))
    return 4.0 * e / (1.0 + e) ** 2


@dataclass(frozen=True)
class RosenMorseDouble:
    """Double Rosen-Morse potential.

    ``V(x) = A tanh(|x|/d - k) - B sech^2(|x|/d - k)``; the x < 0 branch is
    the mirror image of the x >= 0 branch, evaluated through ``|x|``.
    """

    A: float
    B: float
    d: float
    k: float

    has_walls = False

    def __post_init__(self):
        if not (self.A >= 0 and self.B > 0 and self.d > 0 and self.k > 0):
            raise DomainError("need A >= 0 and B, d, k > 0")
        if not self.A < 2.0 * self.B:
            raise DomainError("need A < 2B for the well minimum to exist")

    @property
    def domain(self) -> tuple[float, float]:
        return (-math.inf, math.inf)

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        if np.any(np.isnan(x_arr)):
            raise DomainError("NaN position")
        y = np.abs(x_arr) / self.d - self.k
        out = self.A * np.tanh(y) - self.B * _sech2(y)
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        """dV/dx."""
        x_arr = np.asarray(x, dtype=float)
        y = np.abs(x_arr) / self.d - self.k
        s2 = _sech2(y)
        dv = (self.A * s2 + 2.0 * self.B * s2 * np.tanh(y)) / self.d * np.sign(x_arr)
        return float(dv) if dv.ndim == 0 else dv

    @property
    def minimum(self) -> float:
        return rm_derived_geometry(self)["x0"]

    @property
    def barrier_height(self) -> float:
        return rm_derived_geometry(self)["V0"]

    def to_dict(self) -> dict:
        return {"family": "rosen_morse", "A": self.A, "B": self.B, "d": self.d, "k": self.k}


Potential = Union[SquareDoubleWell, RosenMorseDouble]


@dataclass(frozen=True)
class TurningPoints:
    """Classical turning points b_inner < c_outer of the right well at ``energy``."""

    b_inner: float
    c_outer: float
    energy: float


def evaluate(potential: Potential, x):
    """V(x) for either potential family."""
    return potential(x)


def rm_derived_geometry(p: RosenMorseDouble) -> dict:
    """Minimum position ``x0``, barrier height ``V0`` and well depth ``VD``."""
    ratio = p.A / (2.0 * p.B)
    if not -1.0 < ratio < 1.0:
        raise DomainError("A/2B outside (-1, 1)")
    x0 = p.k * p.d - math.atanh(ratio) * p.d
    # equals V(0) - V(x0) exactly
    V0 = p.A**2 / (4.0 * p.B) - p.A * math.tanh(p.k) + p.B * math.tanh(p.k) ** 2
    VD = p.A + p.B + p.A**2 / (4.0 * p.B)
    return {"x0": x0, "V0": V0, "VD": VD}


def _bracket_root(f, lo, hi, n=2001):
    """Locate the first sign change of ``f`` on a coarse grid over [lo, hi]."""
    xs = np.linspace(lo, hi, n)
    fs = np.array([f(x) for x in xs])
    idx = np.nonzero(np.sign(fs[:-1]) * np.sign(fs[1:]) <= 0)[0]
    if idx.size == 0:
        raise NoBarrierError("no sign change found while bracketing a turning point")
    i = idx[0]
    return xs[i], xs[i + 1]


def turning_points(potential: Potential, E: float) -> TurningPoints:
    """Turning points of the right well at energy ``E``.

    For the square well they are the barrier edge and the wall, independent
    of ``E``. For the Rosen-Morse potential each side of the minimum is
    scanned and then refined by bracketed root finding.
    """
    if isinstance(potential, SquareDoubleWell):
        if not 0.0 < E < potential.V0:
            raise NoBarrierError(f"no classically forbidden barrier at E={E}")
        return TurningPoints(0.5 * potential.d, 0.5 * potential.b, E)

    geo = rm_derived_geometry(potential)
    x0 = geo["x0"]
    v_min = potential(x0)
    v_top = potential(0.0)
    if not v_min < E < v_top:
        raise NoBarrierError(f"no classically forbidden barrier at E={E} (V(x0)={v_min}, V(0)={v_top})")

    def f(x):
        return potential(x) - E

    lo, hi = _bracket_root(f, 0.0, x0)
    b_inner = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    far = x0 + potential.d
    while f(far) <= 0.0:
        far = x0 + 2.0 * (far - x0)
        if far > x0 + 1e6 * potential.d:
            raise NoBarrierError("energy at or above the asymptote: no outer turning point")
    lo, hi = _bracket_root(f, x0, far)
    c_outer = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return TurningPoints(b_inner, c_outer, E)


def reduced_mass(m_H: float, m_N: float) -> float:
    """Reduced mass of the nitrogen atom against the three hydrogens."""
    if not (m_H > 0 and m_N > 0):
        raise DomainError("masses must be positive")
    if math.isinf(m_N):
        return 3.0 * m_H
    return 3.0 * m_H * m_N / (3.0 * m_H + m_N)


# isotopic masses of 1H and 14N in u (CODATA / AME)
M_HYDROGEN = 1.00782503207
M_NITROGEN = 14.0030740048


def potential_from_config(cfg: dict) -> tuple[Potential, UnitSystem]:
    """Build a potential and its unit system from flat config keys.

    Recognised keys: ``family`` (square | rosen_morse), ``b``, ``d``, ``V0``
    or ``A``, ``B``, ``d``, ``k``, and ``units`` (dimensionless |
    spectroscopic). Spectroscopic configs take ``m_H`` and ``m_N`` in u.
    """
    from .errors import ConfigError, UnitError

    family = str(cfg.get("family", "")).strip().lower()
    units_name = str(cfg.get("units", "dimensionless")).strip().lower()
    if family == "square":
        allowed = {"family", "b", "d", "V0", "units"}
    elif family in ("rosen_morse", "rosen-morse", "rm"):
        allowed = {"family", "A", "B", "d", "k", "units", "m_H", "m_N"}
    else:
        raise ConfigError(f"unknown potential family {family!r}")
    for key in cfg:
        if key not in allowed:
            raise ConfigError(f"unknown potential key {key!r}")
    try:
        if family == "square":
            if units_name != "dimensionless":
                raise UnitError("the square double well is defined in dimensionless units only")
            pot = SquareDoubleWell(float(cfg["b"]), float(cfg["d"]), float(cfg["V0"]))
            return pot, UnitSystem.dimensionless()
        pot = RosenMorseDouble(float(cfg["A"]), float(cfg["B"]), float(cfg["d"]), float(cfg["k"]))
    except KeyError as exc:
        raise ConfigError(f"missing potential key {exc.args[0]!r}") from None
    if units_name == "spectroscopic":
        m = reduced_mass(float(cfg.get("m_H", M_HYDROGEN)), float(cfg.get("m_N", M_NITROGEN)))
        return pot, UnitSystem.spectroscopic(m)
    if units_name == "dimensionless":
        if "m_H" in cfg or "m_N" in cfg:
            raise UnitError("atomic masses given for a dimensionless potential")
        return pot, UnitSystem.dimensionless()
    raise UnitError(f"unknown unit system {units_name!r}")
