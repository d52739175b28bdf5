"""First-passage theory for stationary Nelson diffusions.

For a bound state with density p = |psi|^2 the forward drift is the osmotic
velocity alone, and the mean time to reach ``x_end`` from ``x_start`` with a
reflecting wall at ``a`` is

    tau = (2m/hbar) * int_{x_start}^{x_end} dy / p(y) * int_a^y p(z) dz.

The inner cumulative integral is a trapezoid prefix sum on the state grid;
the outer integrand is evaluated as exp(log C(y) - log p(y)) so that deep
barriers do not overflow.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import eigh_tridiagonal

from .eigensolver import BoundState
from .errors import DomainError, InsufficientDataError, NumericalFailure, ResolutionError
from .potentials import turning_points

_TINY = 1e-300


def _log_density(state: BoundState) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(np.abs(state.psi))


def _window(state: BoundState, lo: float, hi: float):
    """Grid points strictly inside (lo, hi) with exact endpoints prepended and appended."""
    x = state.grid
    if lo < x[0] - 1e-12 * abs(x[0]) or hi > x[-1] + 1e-12 * abs(x[-1]):
        raise DomainError(f"window ({lo}, {hi}) outside the state grid [{x[0]}, {x[-1]}]")
    inner = (x > lo) & (x < hi)
    xs = np.concatenate([[lo], x[inner], [hi]])
    return xs, inner


def _interp_at(state: BoundState, values: np.ndarray, xq: float) -> float:
    return float(np.interp(xq, state.grid, values))


def _logp_at(state: BoundState, logp: np.ndarray, xq: float) -> float:
    """log p at an off-grid point by linear interpolation of psi (keeps nodes finite)."""
    x = state.grid
    i = int(np.clip(np.searchsorted(x, xq) - 1, 0, len(x) - 2))
    t = (xq - x[i]) / (x[i + 1] - x[i])
    if logp[i] > -700 and logp[i + 1] > -700:
        psi = (1 - t) * state.psi[i] + t * state.psi[i + 1]
        return 2.0 * math.log(abs(psi)) if psi != 0 else -math.inf
    return (1 - t) * logp[i] + t * logp[i + 1]


def mfpt_quadrature(state: BoundState, a: Optional[float], x_start: float, x_end: float) -> float:
    """Mean first-passage time from ``x_start`` to ``x_end`` with reflection at ``a``.

    ``a=None`` places the reflecting end at the left edge of the grid, which
    is how an infinitely distant wall is realised for states with evanescent
    tails.
    """
    x = state.grid
    if a is None:
        a = float(x[0])
    if not a <= x_start < x_end:
        raise DomainError(f"need a <= x_start < x_end, got {a}, {x_start}, {x_end}")
    if a < x[0] - 1e-12 * max(1.0, abs(x[0])):
        raise DomainError("reflecting end lies outside the state grid")
    p = state.density
    logp = _log_density(state)

    # cumulative probability from a
    cum = cumulative_trapezoid(p, x, initial=0.0)
    cum_a = _interp_at(state, cum, a) if a > x[0] else 0.0
    xs, inner = _window(state, x_start, x_end)
    c = np.concatenate([[_interp_at(state, cum, x_start)], cum[inner], [_interp_at(state, cum, x_end)]]) - cum_a
    lp = np.concatenate([[_logp_at(state, logp, x_start)], logp[inner], [_logp_at(state, logp, x_end)]])
    psi_w = np.concatenate([[_interp_at(state, state.psi, x_start)], state.psi[inner],
                            [_interp_at(state, state.psi, x_end)]])
    if np.any(~np.isfinite(lp)) or np.any(psi_w[1:] * psi_w[:-1] < 0):
        raise NumericalFailure("density vanishes inside the integration window (state has a node)")
    if np.any(c < 0):
        raise DomainError("reflecting end lies to the right of part of the window")
    with np.errstate(divide="ignore"):
        integrand = np.exp(np.log(np.maximum(c, _TINY)) - lp)
    integrand[c <= 0] = 0.0
    value = float(np.trapezoid(integrand, xs))
    if not np.isfinite(value):
        raise NumericalFailure("non-finite mean first-passage time")
    units = state.units
    return 2.0 * units.mass / units.hbar * value


def mfpt_profile(state: BoundState, a: Optional[float], x_end: float, x_starts: Sequence[float]) -> np.ndarray:
    """tau(x) for several starting points sharing one absorbing point."""
    return np.array([mfpt_quadrature(state, a, xs, x_end) for xs in x_starts])


@dataclass(frozen=True)
class HighBarrierResult:
    """Factorized high-barrier MFPT and its validity diagnostics."""

    tau: float
    barrier_integral: float
    well_occupancy: float
    barrier_occupancy: float
    warning: Optional[str] = None


def mfpt_high_barrier_quadrature(state: BoundState, potential, E: Optional[float] = None) -> HighBarrierResult:
    """(2m/hbar) * int_{-b}^{b} dx/p * int_{-c}^{-b} p, at the turning points of ``E``.

    The left-well occupancy int_{-c}^{-b} p is close to 1/2 when the
    factorization is justified; below 0.4 a warning is attached and emitted.
    """
    E = state.energy if E is None else E
    tp = turning_points(potential, E)
    b, c = tp.b_inner, tp.c_outer
    x = state.grid
    p = state.density
    logp = _log_density(state)
    cum = cumulative_trapezoid(p, x, initial=0.0)

    if b <= 0.0:
        barrier = 0.0
    else:
        xs, inner = _window(state, -b, b)
        lp = np.concatenate([[_logp_at(state, logp, -b)], logp[inner], [_logp_at(state, logp, b)]])
        barrier = float(np.trapezoid(np.exp(-lp), xs))
    c_lo = max(-c, float(x[0]))
    well = _interp_at(state, cum, -b) - _interp_at(state, cum, c_lo)
    inside = _interp_at(state, cum, b) - _interp_at(state, cum, -b) if b > 0 else 0.0
    units = state.units
    tau = 2.0 * units.mass / units.hbar * barrier * well
    msg = None
    if well < 0.4:
        msg = f"factorization invalid: left-well occupancy {well:.3f} < 0.4"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return HighBarrierResult(tau, barrier, well, inside, msg)


# ---------------------------------------------------------------------------
# survival operator


def _lambda1(state: BoundState, a: float, b_abs: float, stride: int = 1) -> float:
    x = state.grid[::stride]
    logp = _log_density(state)[::stride]
    mask = (x >= a - 1e-12) & (x <= b_abs + 1e-12)
    xs, lp = x[mask], logp[mask]
    # a hard wall at the reflecting end carries zero density; drop it
    while xs.size and not np.isfinite(lp[0]):
        xs, lp = xs[1:], lp[1:]
    if xs.size < 8:
        raise ResolutionError("too few grid points in the survival window")
    if np.any(~np.isfinite(lp)):
        raise NumericalFailure("density vanishes inside the survival window")
    h = xs[1] - xs[0]
    D = 0.5 * state.units.hbar_over_m
    # unknowns at every node except the absorbing end; node 0 carries a no-flux condition
    n = xs.size - 1
    up = np.exp(0.5 * (lp[1:] - lp[:-1]))  # sqrt(p_{i+1}/p_i)
    down = 1.0 / up  # sqrt(p_i/p_{i+1})
    diag = np.empty(n)
    diag[0] = up[0]
    diag[1:] = up[1:n] + down[: n - 1]
    off = -np.ones(n - 1)
    # half control volume at the reflecting node keeps the no-flux condition second order
    scale = np.full(n, D / (h * h))
    scale[0] *= 2.0
    # symmetric form: D^{-1/2} S D^{-1/2} with the boundary weight folded in
    w = np.sqrt(scale)
    diag_s = diag * scale
    off_s = off * w[:-1] * w[1:]
    vals = eigh_tridiagonal(diag_s, off_s, select="i", select_range=(0, 0), eigvals_only=True)
    return float(vals[0])


def survival_decay_rate(state: BoundState, a: Optional[float], b_abs: float) -> float:
    """Smallest eigenvalue of -(u d/dx + (hbar/2m) d^2/dx^2) on (a, b_abs).

    Reflecting (zero-derivative) at ``a``, absorbing at ``b_abs``. The
    operator is symmetrized by conjugation with sqrt(p), giving a real
    tridiagonal problem. The result is compared against the same problem on
    every other grid node and rejected if the two differ by more than 1%.
    """
    if a is None:
        a = float(state.grid[0])
    if not a < b_abs:
        raise DomainError("need a < b_abs")
    fine = _lambda1(state, a, b_abs, 1)
    coarse = _lambda1(state, a, b_abs, 2)
    if abs(fine - coarse) > 0.01 * abs(fine):
        raise ResolutionError(f"lambda_1 changed by {abs(fine - coarse) / fine:.2%} on coarsening")
    if not fine > 0:
        raise NumericalFailure("non-positive survival decay rate")
    return fine


# ---------------------------------------------------------------------------
# ensembles and tails


@dataclass(frozen=True, eq=False)
class FptEnsemble:
    """Completed first-passage times of one ensemble.

    ``taus`` excludes timed-out trajectories; those are only counted.
    """

    taus: np.ndarray
    timed_out: int = 0
    config_digest: str = ""
    clamped_steps: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.sort(np.asarray(self.taus, dtype=float))
        if t.size and not np.all(t > 0):
            raise DomainError("first-passage times must be positive")
        t.flags.writeable = False
        object.__setattr__(self, "taus", t)
        total = t.size + self.timed_out
        if total and self.timed_out > 0.001 * total:
            warnings.warn(f"{self.timed_out} of {total} trajectories timed out", RuntimeWarning, stacklevel=2)

    @property
    def n(self) -> int:
        return int(self.taus.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.taus)) if self.n else math.nan

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return math.nan
        return float(np.std(self.taus, ddof=1) / math.sqrt(self.n))

    def histogram(self, bins: int = 100):
        counts, edges = np.histogram(self.taus, bins=bins)
        width = np.diff(edges)
        density = counts / (self.n * width) if self.n else counts.astype(float)
        return edges, counts, density

    def write_histogram(self, path, bins: int = 100, header: Optional[str] = None) -> None:
        edges, counts, density = self.histogram(bins)
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header)
            w = csv.writer(fh)
            w.writerow(["bin_left", "bin_right", "count", "density"])
            for lo, hi, c, d in zip(edges[:-1], edges[1:], counts, density):
                w.writerow([f"{lo:.17g}", f"{hi:.17g}", int(c), f"{d:.17g}"])


def digest(payload: dict) -> str:
    """Stable SHA-256 of a JSON-serializable mapping."""
    text = json.dumps(payload, sort_keys=True, default=float, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class TailFit:
    """Exponential tail p(tau) = amplitude * exp(-rate * tau) for tau >= threshold."""

    rate: float
    amplitude: float
    threshold: float
    goodness: float
    n_exceed: int
    rate_stderr: float

    @property
    def tau_l(self) -> float:
        return 1.0 / self.rate

    def to_dict(self, ensemble: Optional[FptEnsemble] = None) -> dict:
        out = {
            "rate": self.rate,
            "tau_l": self.tau_l,
            "amplitude": self.amplitude,
            "threshold": self.threshold,
            "goodness": self.goodness,
            "n_exceed": self.n_exceed,
            "rate_stderr": self.rate_stderr,
        }
        if ensemble is not None:
            out["n"] = ensemble.n
            out["timed_out"] = ensemble.timed_out
        return out


def fit_exponential_tail(ensemble: FptEnsemble | np.ndarray, threshold: Optional[float] = None,
                         min_samples: int = 100, bins: int = 50) -> TailFit:
    """Maximum-likelihood exponential fit to the exceedances over ``threshold``.

    The rate is 1/mean(tau - threshold) over tau >= threshold (the default
    threshold is the sample median). ``goodness`` is the R^2 of a straight
    line through the log of the exceedance histogram, reported alongside.
    """
    taus = ensemble.taus if isinstance(ensemble, FptEnsemble) else np.sort(np.asarray(ensemble, dtype=float))
    if taus.size == 0:
        raise InsufficientDataError("empty ensemble")
    if threshold is None:
        threshold = float(np.median(taus))
    if threshold < 0:
        raise DomainError("threshold must be non-negative")
    exc = taus[taus >= threshold] - threshold
    if exc.size < min_samples:
        raise InsufficientDataError(f"only {exc.size} samples above threshold {threshold}, need {min_samples}")
    if not np.mean(exc) > 0:
        raise InsufficientDataError(f"no spread above threshold {threshold}")
    rate = 1.0 / float(np.mean(exc))
    frac = exc.size / taus.size
    amplitude = frac * rate * math.exp(rate * threshold)

    counts, edges = np.histogram(exc, bins=bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    ok = counts > 0
    goodness = math.nan
    if np.count_nonzero(ok) >= 3:
        y = np.log(counts[ok])
        coef = np.polyfit(centres[ok], y, 1)
        resid = y - np.polyval(coef, centres[ok])
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        goodness = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return TailFit(rate, amplitude, float(threshold), goodness, int(exc.size), rate / math.sqrt(exc.size))
