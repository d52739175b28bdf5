"""Ammonia inversion: Rosen-Morse fit, doublets, mean tunneling time and frequency.

Energies are in cm^-1, lengths in Angstrom and times in ps throughout
(:meth:`UnitSystem.spectroscopic` with the NH3 reduced mass).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, minimize

from .closed_forms import qm_sq_ratio
from .eigensolver import (BoundState, SpectrumPair, default_grid, numerov_bound_state, numerov_levels,
                          spectrum_pair)
from .errors import DomainError, FitFailure, OrderingError, SqtError, StageError
from .first_passage import digest, fit_exponential_tail, mfpt_quadrature
from .potentials import (M_HYDROGEN, M_NITROGEN, RosenMorseDouble, TurningPoints, reduced_mass,
                         rm_derived_geometry, turning_points)
from .stochastic_dynamics import DEFAULT_SEED, OsmoticField, TrajectoryConfig, run_ensemble
from .units import PICOSECOND, UnitSystem, mev_to_wavenumber

NU_EXP_GHZ = 23.79
NU_EXP_REFERENCE = "NH3 ground-state inversion frequency, 23.79 GHz"

_MEV = mev_to_wavenumber(1.0)  # cm^-1 per meV


@dataclass(frozen=True)
class SpectroscopicTargets:
    """Target splittings in cm^-1: E0+ - E0-, E1+ - E1- and E1+ - E0-."""

    delta_e0: float = 0.8
    delta_e1: float = 33.0
    pair_gap: float = 950.0

    def __post_init__(self):
        if not (self.delta_e0 > 0 and self.delta_e1 > 0 and self.pair_gap > 0):
            raise DomainError("target splittings must be positive")
        if not self.delta_e0 < self.delta_e1 < self.pair_gap:
            raise OrderingError("need delta_e0 < delta_e1 < pair_gap")

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_e0, self.delta_e1, self.pair_gap])


def ammonia_units(m_H: float = M_HYDROGEN, m_N: float = M_NITROGEN) -> UnitSystem:
    return UnitSystem.spectroscopic(reduced_mass(m_H, m_N))


@dataclass(frozen=True)
class ModelSplittings:
    levels: np.ndarray  # four lowest eigenvalues, ascending
    delta_e0: float
    delta_e1: float
    pair_gap: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_e0, self.delta_e1, self.pair_gap])


def model_splittings(potential: RosenMorseDouble, units: UnitSystem, grid_points: int = 8001) -> ModelSplittings:
    """The three fitted quantities for one potential."""
    w = numerov_levels(potential, units, 4, default_grid(potential, units, grid_points))
    return ModelSplittings(w, float(w[1] - w[0]), float(w[3] - w[2]), float(w[3] - w[0]))


@dataclass(frozen=True)
class RmFit:
    """Outcome of :func:`fit_rm_parameters`.

    ``residuals`` are relative errors (model - target) / target of
    (delta_e0, delta_e1, pair_gap).
    """

    potential: RosenMorseDouble
    mode: str
    model: ModelSplittings
    residuals: np.ndarray
    objective: float
    evaluations: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "A": self.potential.A,
            "B": self.potential.B,
            "d": self.potential.d,
            "k": self.potential.k,
            "delta_e0": self.model.delta_e0,
            "delta_e1": self.model.delta_e1,
            "pair_gap": self.model.pair_gap,
            "residuals": [float(r) for r in self.residuals],
            "objective": self.objective,
            "evaluations": self.evaluations,
        }


FIT_WEIGHTS = (100.0, 1.0, 1.0)


def _weighted(res: np.ndarray) -> float:
    return float(np.dot(FIT_WEIGHTS, res * res))


def fit_rm_parameters(targets: SpectroscopicTargets, d: float = 0.17, k: float = 2.22,
                      units: Optional[UnitSystem] = None, mode: str = "splitting",
                      A_bounds: tuple[float, float] = (0.0, 1000.0),
                      B_bounds: tuple[float, float] = (2200.0, 3000.0),
                      A_anchor: float = 398.0, grid_points: int = 8001) -> RmFit:
    """Fit A and B of a Rosen-Morse double well to spectroscopic splittings.

    Two objectives are available.

    ``"splitting"``
        A is held at ``A_anchor`` and B is solved by bracketed root finding
        so that the ground splitting equals ``targets.delta_e0``. Two
        parameters cannot match three targets, and the ground splitting is
        the quantity that fixes the tunneling frequency.
    ``"weighted"``
        Bounded Nelder-Mead on the weighted sum of squared relative errors
        of all three targets (weights 100, 1, 1), restarted from the four
        corners of the (A, B) box; the best end point wins.

    Raises
    ------
    FitFailure
        If the ground splitting cannot be brought within 5 % of its target
        inside the bounds. ``best`` holds the closest attempt.
    """
    units = units or ammonia_units()
    (a_lo, a_hi), (b_lo, b_hi) = A_bounds, B_bounds
    if not (0.0 <= a_lo < a_hi and 0.0 < b_lo < b_hi):
        raise DomainError("invalid A or B bounds")
    tgt = targets.as_array()
    evals = 0

    def model(A, B) -> Optional[ModelSplittings]:
        nonlocal evals
        evals += 1
        try:
            return model_splittings(RosenMorseDouble(A, B, d, k), units, grid_points)
        except SqtError:
            return None

    if mode == "splitting":
        if not a_lo <= A_anchor <= a_hi:
            raise DomainError("A_anchor lies outside A_bounds")

        def gap(B):
            m = model(A_anchor, B)
            if m is None:
                raise FitFailure(f"eigensolve failed at B={B}")
            return m.delta_e0 - targets.delta_e0

        g_lo, g_hi = gap(b_lo), gap(b_hi)
        if g_lo * g_hi > 0:
            B = b_lo if abs(g_lo) < abs(g_hi) else b_hi
            best = model(A_anchor, B)
            raise FitFailure(f"ground splitting target {targets.delta_e0} not bracketed for B in {B_bounds}",
                             best={"A": A_anchor, "B": B, "delta_e0": best.delta_e0 if best else None})
        B = brentq(gap, b_lo, b_hi, xtol=1e-9, rtol=1e-13)
        A = A_anchor
    elif mode == "weighted":
        def objective(p):
            m = model(p[0], p[1])
            if m is None:
                return 1e6
            return _weighted(m.as_array() / tgt - 1.0)

        best = None
        inset = 0.05
        for fa in (inset, 1.0 - inset):
            for fb in (inset, 1.0 - inset):
                x0 = (a_lo + fa * (a_hi - a_lo), b_lo + fb * (b_hi - b_lo))
                r = minimize(objective, x0, method="Nelder-Mead", bounds=[A_bounds, B_bounds],
                             options={"xatol": 1e-3, "fatol": 1e-10, "maxiter": 400})
                if best is None or r.fun < best.fun:
                    best = r
        A, B = float(best.x[0]), float(best.x[1])
    else:
        raise DomainError(f"unknown fit mode {mode!r}")

    pot = RosenMorseDouble(float(A), float(B), d, k)
    m = model_splittings(pot, units, grid_points)
    res = m.as_array() / tgt - 1.0
    if abs(res[0]) > 0.05:
        raise FitFailure(f"ground splitting off by {100 * res[0]:.1f} % after the fit",
                         best={"A": A, "B": B, "residuals": res.tolist()})
    return RmFit(pot, mode, m, res, _weighted(res), evals)


def inversion_frequency(tau_bar_ps: float) -> float:
    """nu_SQ = 1 / (pi tau_bar) in GHz for a mean tunneling time in ps."""
    if not tau_bar_ps > 0:
        raise DomainError("tau_bar must be positive")
    return 1.0 / (math.pi * tau_bar_ps * PICOSECOND) / 1e9


# ---------------------------------------------------------------------------
# barrier-height and stopping-rule scans


def barrier_mev(potential: RosenMorseDouble) -> float:
    return rm_derived_geometry(potential)["V0"] / _MEV


def locate_barrier(V0_mev: float, A: float = 398.0, d: float = 0.17, k: float = 2.22) -> float:
    """B giving barrier height ``V0_mev`` at fixed A, d and k."""
    t = math.tanh(k)
    # V0(B) increases for B above A / (2 tanh k), which also keeps A < 2B
    lo = max(A / (2.0 * t) * (1.0 + 1e-9), 1e-9)
    target = V0_mev * _MEV
    f = lambda B: rm_derived_geometry(RosenMorseDouble(A, B, d, k))["V0"] - target  # noqa: E731
    if f(lo) > 0:
        raise DomainError(f"barrier {V0_mev} meV is below the smallest reachable height at A={A}")
    hi = 2.0 * lo
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, lo, hi, xtol=1e-10, rtol=1e-14)


@dataclass(frozen=True)
class DoubletPoint:
    """Ground doublet, mean tunneling time and their ratio for one potential."""

    potential: RosenMorseDouble
    state: BoundState
    pair: SpectrumPair
    turning: TurningPoints
    tau_bar: float

    @property
    def ratio(self) -> float:
        return qm_sq_ratio(0.5 * self.pair.period, self.tau_bar)

    def row(self) -> dict:
        geo = rm_derived_geometry(self.potential)
        return {
            "A": self.potential.A,
            "B": self.potential.B,
            "V0_cm": geo["V0"],
            "V0_meV": geo["V0"] / _MEV,
            "VD_cm": geo["VD"],
            "barrier_fraction": geo["V0"] / geo["VD"],
            "E0": self.pair.e0,
            "E1": self.pair.e1,
            "delta_e": self.pair.delta_e,
            "period": self.pair.period,
            "b_inner": self.turning.b_inner,
            "tau_bar": self.tau_bar,
            "ratio": self.ratio,
        }


def doublet_point(potential: RosenMorseDouble, units: UnitSystem, grid_points: int = 8001) -> DoubletPoint:
    """Numerov doublet and quadrature tau_bar on the window (-b, b) at E0."""
    grid = default_grid(potential, units, grid_points)
    state = numerov_bound_state(potential, units, 0, grid)
    e1 = numerov_bound_state(potential, units, 1, grid).energy
    pair = spectrum_pair(state.energy, e1, units)
    tp = turning_points(potential, state.energy)
    tau = mfpt_quadrature(state, None, -tp.b_inner, tp.b_inner)
    return DoubletPoint(potential, state, pair, tp, tau)


def ratio_scan(B_values: Sequence[float], A: float = 398.0, d: float = 0.17, k: float = 2.22,
               units: Optional[UnitSystem] = None, grid_points: int = 8001) -> list[dict]:
    """tau_QM / tau_bar along a sweep of B (barrier height) at fixed A, d, k."""
    units = units or ammonia_units()
    return [doublet_point(RosenMorseDouble(A, float(B), d, k), units, grid_points).row() for B in B_values]


def stopping_rule_scan(point: DoubletPoint, n_points: int = 41) -> list[dict]:
    """tau_bar and tau_QM / tau_bar for windows (-x_f, x_f), x_f from b to the minimum."""
    x0 = rm_derived_geometry(point.potential)["x0"]
    b = point.turning.b_inner
    rows = []
    for x_f in np.linspace(b, x0, n_points):
        tau = mfpt_quadrature(point.state, None, -float(x_f), float(x_f))
        rows.append({"x_f": float(x_f), "tau_bar": tau, "ratio": qm_sq_ratio(0.5 * point.pair.period, tau)})
    return rows


def scan_spread(rows: Sequence[dict], key: str = "ratio") -> float:
    """(max - min) / min of one column."""
    v = np.array([r[key] for r in rows])
    return float((v.max() - v.min()) / v.min())


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class AmmoniaConfig:
    """Inputs of :func:`run_ammonia_pipeline`.

    Giving both ``A`` and ``B`` skips the fit.
    """

    targets: SpectroscopicTargets = field(default_factory=SpectroscopicTargets)
    d_angstrom: float = 0.17
    k: float = 2.22
    m_H: float = M_HYDROGEN
    m_N: float = M_NITROGEN
    fit_mode: str = "splitting"
    A_anchor: float = 398.0
    A_bounds: tuple[float, float] = (0.0, 1000.0)
    B_bounds: tuple[float, float] = (2200.0, 3000.0)
    A: Optional[float] = None
    B: Optional[float] = None
    grid_points: int = 8001
    ensemble_n: int = 0
    ensemble_dt_ps: float = 1e-5
    seed: int = DEFAULT_SEED
    workers: Optional[int] = None
    tail_threshold: Optional[float] = None

    def __post_init__(self):
        if (self.A is None) != (self.B is None):
            raise DomainError("give both A and B to skip the fit, or neither")
        if self.ensemble_n < 0:
            raise DomainError("ensemble_n must be non-negative")

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("workers")  # does not change results
        return out


@dataclass(frozen=True, eq=False)
class AmmoniaReport:
    fitted: RosenMorseDouble
    fit: Optional[RmFit]
    levels: tuple[SpectrumPair, SpectrumPair]
    turning: TurningPoints
    tau_bar: float
    nu_sq: float
    nu_qm: float
    nu_exp: float
    config_digest: str
    ensemble: Optional[dict] = None
    tail: Optional[dict] = None
    state: Optional[BoundState] = field(default=None, repr=False)
    ensemble_run: object = field(default=None, repr=False)

    @property
    def ratio(self) -> float:
        return qm_sq_ratio(0.5 * self.levels[0].period, self.tau_bar)

    def to_dict(self) -> dict:
        geo = rm_derived_geometry(self.fitted)
        return {
            "potential": self.fitted.to_dict(),
            "geometry": geo,
            "fit": self.fit.to_dict() if self.fit else None,
            "levels": [asdict(p) for p in self.levels],
            "turning_points": asdict(self.turning),
            "tau_bar_ps": self.tau_bar,
            "nu_sq_ghz": self.nu_sq,
            "nu_qm_ghz": self.nu_qm,
            "nu_exp_ghz": self.nu_exp,
            "nu_exp_reference": NU_EXP_REFERENCE,
            "ratio": self.ratio,
            "nu_sq_vs_exp": self.nu_sq / self.nu_exp - 1.0,
            "ensemble": self.ensemble,
            "tail": self.tail,
            "config_digest": self.config_digest,
        }


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # tag and re-raise
        raise StageError(name, exc) from exc


def run_ammonia_pipeline(config: AmmoniaConfig = AmmoniaConfig()) -> AmmoniaReport:
    """Fit, solve the two lowest doublets, compute tau_bar and nu_SQ.

    With ``ensemble_n > 0`` a Monte Carlo ensemble is run from the left
    inner turning point to the right one and its tail is fitted. Errors are
    re-raised as :class:`StageError` naming the failing stage.
    """
    units = _stage("units", ammonia_units, config.m_H, config.m_N)
    if config.A is not None:
        fit = None
        pot = _stage("potential", RosenMorseDouble, config.A, config.B, config.d_angstrom, config.k)
    else:
        fit = _stage("fit", fit_rm_parameters, config.targets, config.d_angstrom, config.k, units,
                     config.fit_mode, config.A_bounds, config.B_bounds, config.A_anchor, config.grid_points)
        pot = fit.potential

    def solve():
        grid = default_grid(pot, units, config.grid_points)
        w = numerov_levels(pot, units, 4, grid)
        ground = numerov_bound_state(pot, units, 0, grid)
        return ground, (spectrum_pair(w[0], w[1], units), spectrum_pair(w[2], w[3], units))

    state, levels = _stage("levels", solve)
    tp = _stage("turning_points", turning_points, pot, state.energy)
    tau = _stage("mfpt", mfpt_quadrature, state, None, -tp.b_inner, tp.b_inner)
    nu_sq = _stage("frequency", inversion_frequency, tau)
    nu_qm = units.frequency_ghz(levels[0].period)
    cfg_digest = digest(config.to_dict())

    ens_summary = tail_summary = run = None
    if config.ensemble_n > 0:
        def ensemble():
            fld = OsmoticField.from_state(state, pot)
            tc = TrajectoryConfig(dt=config.ensemble_dt_ps, seed=config.seed, x_init=-tp.b_inner,
                                  absorb_at=tp.b_inner,
                                  max_steps=TrajectoryConfig.default_max_steps(tau, config.ensemble_dt_ps),
                                  expected_mfpt=tau)
            return run_ensemble(fld, tc, config.ensemble_n, workers=config.workers)

        run = _stage("ensemble", ensemble)
        e = run.ensemble
        ens_summary = {"n": e.n, "timed_out": e.timed_out, "mean": e.mean, "stderr": e.stderr,
                       "clamped_steps": e.clamped_steps, "config_digest": e.config_digest}
        tail_summary = _stage("tail_fit", fit_exponential_tail, e, config.tail_threshold).to_dict(e)

    return AmmoniaReport(pot, fit, levels, tp, tau, nu_sq, nu_qm, NU_EXP_GHZ, cfg_digest,
                         ens_summary, tail_summary, state, run)
