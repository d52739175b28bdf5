"""Closed-form and asymptotic tunneling results.

Square double well: the exact mean tunneling time across the barrier, its
high-barrier limit and the asymptotic doublet splitting. Smooth wells: the
WKB barrier integral, the classical period and the quantities built from
them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .eigensolver import _k0, even_condition, ground_wavenumber, solve_square_levels
from .errors import DomainError, NoDoubletError
from .potentials import RosenMorseDouble, SquareDoubleWell, TurningPoints, rm_derived_geometry, turning_points
from .units import UnitSystem

_GL_NODES = 160


@dataclass(frozen=True)
class SquareWellClosedForm:
    """Ground-state wavenumbers of a square double well.

    Build with :meth:`from_well` unless ``k`` is already known.
    """

    well: SquareDoubleWell
    k: float
    kappa: float
    k0: float
    units: UnitSystem

    def __post_init__(self):
        if not 0.0 < self.k < self.k0:
            raise DomainError(f"need 0 < k < k0, got k={self.k}, k0={self.k0}")
        if abs(self.kappa**2 + self.k**2 - self.k0**2) > 1e-12 * self.k0**2:
            raise DomainError("kappa^2 + k^2 != k0^2")
        res = float(even_condition(self.k, self.well, self.units))
        if abs(res) > 1e-10 * max(1.0, self.k0):
            raise DomainError(f"k={self.k} is not an even root (residual {res:.3e})")

    @classmethod
    def from_well(cls, well: SquareDoubleWell, units: Optional[UnitSystem] = None) -> "SquareWellClosedForm":
        units = units or UnitSystem.dimensionless()
        k = ground_wavenumber(well, units)
        k0 = _k0(well, units)
        return cls(well, k, math.sqrt(k0 * k0 - k * k), k0, units)

    @property
    def energy(self) -> float:
        return self.units.kinetic * self.k**2

    @property
    def kappa_d(self) -> float:
        return self.kappa * self.well.d

    @property
    def kappa_L(self) -> float:
        return self.kappa * self.well.L


def dsw_mean_tau(cf: SquareWellClosedForm) -> float:
    """Mean time from -d/2 to +d/2 with the reflecting wall at -b/2."""
    k, kap, k0 = cf.k, cf.kappa, cf.k0
    d, L = cf.well.d, cf.well.L
    kd = kap * d
    r = k0 * k0 / (k * k)
    bracket = 0.5 * d + L * (1.0 - 0.5 * r + 0.5 * r * math.cosh(kd)) + r * math.sinh(kd) / (2.0 * kap)
    u = cf.units
    return 2.0 * u.mass / u.hbar * math.tanh(0.5 * kd) / kap * bracket


def dsw_mean_tau_high_barrier(cf: SquareWellClosedForm, exponent: str = "k0") -> float:
    """High-barrier limit of :func:`dsw_mean_tau`.

    ``exponent="k0"`` gives (m L k0 / 2 hbar k^2) exp(k0 d), with kappa
    replaced by k0 throughout. ``exponent="kappa"`` keeps kappa:
    (m L k0^2 / 2 hbar kappa k^2) exp(kappa d).
    """
    u = cf.units
    k, kap, k0, d, L = cf.k, cf.kappa, cf.k0, cf.well.d, cf.well.L
    if exponent == "k0":
        return u.mass * L * k0 / (2.0 * u.hbar * k * k) * math.exp(k0 * d)
    if exponent == "kappa":
        return u.mass * L * k0 * k0 / (2.0 * u.hbar * kap * k * k) * math.exp(kap * d)
    raise ValueError(f"exponent must be 'k0' or 'kappa', got {exponent!r}")


@dataclass(frozen=True)
class Doublet:
    delta_e: float
    period: float


def dsw_splitting_and_period(cf: SquareWellClosedForm) -> Doublet:
    """Asymptotic splitting 4 hbar^2 k^2 exp(-kappa d) / (L kappa m) and T = 2 pi hbar / dE."""
    u = cf.units
    delta = 4.0 * u.hbar**2 * cf.k**2 / (cf.well.L * cf.kappa * u.mass) * math.exp(-cf.kappa_d)
    return Doublet(delta, 2.0 * math.pi * u.hbar / delta)


def exact_square_doublet(well: SquareDoubleWell, units: Optional[UnitSystem] = None) -> Doublet:
    """Splitting and period from the exact even and odd roots."""
    units = units or UnitSystem.dimensionless()
    lv = solve_square_levels(well, units)
    delta = units.kinetic * (lv.k_odd**2 - lv.k_even**2)
    return Doublet(delta, 2.0 * math.pi * units.hbar / delta)


def qm_sq_ratio(tau_qm: float, tau_bar: float) -> float:
    """tau_QM / tau_bar."""
    if not (tau_qm > 0 and tau_bar > 0):
        raise DomainError("times must be positive")
    return tau_qm / tau_bar


def nu_sq(tau_bar: float) -> float:
    """Stochastic tunneling frequency 1 / (pi tau_bar), in inverse time units of ``tau_bar``."""
    if not tau_bar > 0:
        raise DomainError("tau_bar must be positive")
    return 1.0 / (math.pi * tau_bar)


# ---------------------------------------------------------------------------
# WKB


def _gl(n: int = _GL_NODES):
    return np.polynomial.legendre.leggauss(n)


def _sqrt_endpoint_integral(f: Callable, lo: float, hi: float, at: str, n: int = _GL_NODES) -> float:
    """Integral of f over (lo, hi) with a square-root behaviour at one end.

    The substitution x = end -/+ s^2 turns f ~ (x - end)^(+-1/2) into a
    regular integrand for Gauss-Legendre.
    """
    if hi <= lo:
        return 0.0
    t, w = _gl(n)
    smax = math.sqrt(hi - lo)
    s = 0.5 * smax * (t + 1.0)
    ws = 0.5 * smax * w
    x = lo + s * s if at == "lo" else hi - s * s
    return float(np.sum(ws * 2.0 * s * f(x)))


def classical_period(potential: Callable, units: UnitSystem, E: float, b: float, c: float,
                     x_split: Optional[float] = None, n: int = _GL_NODES) -> float:
    """2 * int_b^c dx / v(x) with v = sqrt(2 (E - V) / m).

    The interval is split at ``x_split`` (default the midpoint) and each
    half is mapped so that its turning point becomes a regular endpoint.
    """
    if not b < c:
        raise DomainError("need b < c")
    xm = 0.5 * (b + c) if x_split is None else x_split
    m = units.mass

    def inv_v(x):
        gap = np.maximum(E - potential(x), 0.0)
        with np.errstate(divide="ignore"):
            return np.where(gap > 0, np.sqrt(m / (2.0 * np.where(gap > 0, gap, 1.0))), 0.0)

    half = _sqrt_endpoint_integral(inv_v, b, xm, "lo", n) + _sqrt_endpoint_integral(inv_v, xm, c, "hi", n)
    return 2.0 * half


def barrier_integral(potential: Callable, units: UnitSystem, E: float, b: float, n: int = _GL_NODES) -> float:
    """Phi = int_{-b}^{b} kappa dx for a symmetric barrier, kappa = sqrt(2m(V - E))/hbar."""
    if b <= 0:
        return 0.0

    def kappa(x):
        return np.sqrt(2.0 * units.mass * np.maximum(potential(x) - E, 0.0)) / units.hbar

    # integrate on (0, b) so the cusp of |x|-potentials at 0 sits on an endpoint
    return 2.0 * _sqrt_endpoint_integral(kappa, 0.0, b, "hi", n)


def wkb_validity(potential: Callable, units: UnitSystem, E: float, b: float, c: float,
                 derivative: Optional[Callable] = None, margin: float = 0.1, n: int = 400) -> float:
    """Largest hbar |V'| / (sqrt(2m) |E - V|^(3/2)) on (0, c) away from the turning points.

    Values well below one mean the local wavelength changes slowly. Points
    within ``margin`` of an interval length from b or c are excluded.
    """
    def dV(x):
        if derivative is not None:
            return derivative(x)
        h = 1e-6 * max(1.0, abs(c))
        return (potential(x + h) - potential(x - h)) / (2 * h)

    pieces = []
    for lo, hi in ((0.0, b), (b, c)):
        if hi <= lo:
            continue
        pad = margin * (hi - lo)
        pieces.append(np.linspace(lo + pad, hi - pad, n))
    x = np.concatenate(pieces)
    x = x[x > 0]
    gap = np.abs(E - potential(x))
    q = units.hbar * np.abs(dV(x)) / (math.sqrt(2.0 * units.mass) * gap**1.5)
    return float(np.max(q))


@dataclass(frozen=True)
class WkbQuantities:
    """WKB barrier integral, classical period and derived tunneling scales."""

    phi: float
    t_cl: float
    tau_wkb: float
    t_big_wkb: float
    delta_e_wkb: float
    validity: float
    turning: TurningPoints

    def to_dict(self) -> dict:
        return {
            "phi": self.phi, "t_cl": self.t_cl, "tau_wkb": self.tau_wkb,
            "t_big_wkb": self.t_big_wkb, "delta_e_wkb": self.delta_e_wkb, "validity": self.validity,
            "b_inner": self.turning.b_inner, "c_outer": self.turning.c_outer, "energy": self.turning.energy,
        }


def wkb_quantities(potential: RosenMorseDouble, E: float, units: UnitSystem,
                   tp: Optional[TurningPoints] = None) -> WkbQuantities:
    """Phi, T_cl and the WKB tunneling time, period and splitting at energy ``E``."""
    if tp is None:
        tp = turning_points(potential, E)
    elif abs(tp.energy - E) > 1e-12 * max(1.0, abs(E)):
        raise DomainError("turning points were computed at a different energy")
    b, c = tp.b_inner, tp.c_outer
    x0 = rm_derived_geometry(potential)["x0"] if isinstance(potential, RosenMorseDouble) else None
    phi = barrier_integral(potential, units, E, b)
    t_cl = classical_period(potential, units, E, b, c, x_split=x0)
    scale = math.exp(phi)
    deriv = getattr(potential, "derivative", None)
    return WkbQuantities(
        phi=phi,
        t_cl=t_cl,
        tau_wkb=scale * t_cl,
        t_big_wkb=math.pi * scale * t_cl,
        delta_e_wkb=2.0 * units.hbar / t_cl * math.exp(-phi),
        validity=wkb_validity(potential, units, E, b, c, deriv),
        turning=tp,
    )


# ---------------------------------------------------------------------------
# parameter scans of the square well


def _square_row(b: float, d: float, V0: float, units: UnitSystem) -> dict:
    well = SquareDoubleWell(b, d, V0)
    row = {"b": b, "d": d, "V0": V0, "k0": _k0(well, units)}
    try:
        cf = SquareWellClosedForm.from_well(well, units)
    except NoDoubletError:
        row.update(k=math.nan, kappa=math.nan, energy=math.nan, tau_bar=math.nan, tau_high_barrier=math.nan)
        return row
    row.update(k=cf.k, kappa=cf.kappa, energy=cf.energy, tau_bar=dsw_mean_tau(cf),
               tau_high_barrier=dsw_mean_tau_high_barrier(cf))
    return row


def dsw_k0_scan(b: float, d_values: Iterable[float], k0_values: Iterable[float],
                units: Optional[UnitSystem] = None) -> list[dict]:
    """tau_bar against k0 = sqrt(2 m V0)/hbar for each barrier width."""
    units = units or UnitSystem.dimensionless()
    k0s = list(k0_values)
    return [_square_row(b, d, (units.hbar * k0) ** 2 / (2.0 * units.mass), units) for d in d_values for k0 in k0s]


def dsw_d_scan(b: float, V0_values: Iterable[float], d_values: Iterable[float],
               units: Optional[UnitSystem] = None) -> list[dict]:
    """tau_bar against the barrier width for each barrier height."""
    units = units or UnitSystem.dimensionless()
    ds = list(d_values)
    return [_square_row(b, d, V0, units) for V0 in V0_values for d in ds]


def square_ratio(well: SquareDoubleWell, units: Optional[UnitSystem] = None) -> float:
    """(T/2) / tau_bar from the exact doublet and the exact barrier-edge time."""
    units = units or UnitSystem.dimensionless()
    cf = SquareWellClosedForm.from_well(well, units)
    return qm_sq_ratio(0.5 * exact_square_doublet(well, units).period, dsw_mean_tau(cf))


__all__ = [
    "SquareWellClosedForm", "dsw_mean_tau", "dsw_mean_tau_high_barrier", "Doublet",
    "dsw_splitting_and_period", "exact_square_doublet", "qm_sq_ratio", "nu_sq",
    "classical_period", "barrier_integral", "wkb_validity", "WkbQuantities", "wkb_quantities",
    "dsw_k0_scan", "dsw_d_scan", "square_ratio",
]
