"""Euler-Maruyama simulation of the stationary Nelson diffusion.

For a real bound state the forward drift is the osmotic velocity
u = (hbar/m) psi'/psi and each step is

    x <- x + u(x) dt + sqrt(hbar dt / m) xi,    xi ~ N(0, 1).

Trajectory ``i`` of a run draws its noise from the counter-based stream
keyed by (seed, i) in :mod:`.noise`, so any trajectory can be re-run alone
and reproduces bit for bit, whatever the worker layout.
"""
from __future__ import annotations

import csv
import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numba as nb
import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import PchipInterpolator

from .eigensolver import BoundState, Parity
from .errors import DomainError, InfiniteWallError, NumericalFailure
from .first_passage import FptEnsemble, digest
from .noise import normal, stream_key
from .potentials import RosenMorseDouble, SquareDoubleWell
from .units import UnitSystem

CLAMP_SIGMAS = 10.0
DEFAULT_SEED = 12345

_STATUS_RUNNING, _STATUS_CROSSED, _STATUS_NAN, _STATUS_TIMEOUT = 0, 1, 2, 3
LANES = 4


class FieldKind(str, enum.Enum):
    FREE = "free"
    CLOSED_FORM = "closed_form"
    GRID = "grid"


_KIND_CODE = {FieldKind.FREE: 0, FieldKind.CLOSED_FORM: 1, FieldKind.GRID: 2}


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True, error_model="numpy", inline="always")
def _cubic(coef, i, dx):
    return ((coef[0, i] * dx + coef[1, i]) * dx + coef[2, i]) * dx + coef[3, i]


@nb.njit(cache=True, error_model="numpy", inline="always")
def _drift(kind, p, coef, x):
    if kind == 1:
        # odd drift of an even square-well state, tabulated on x >= 0
        ax = abs(x)
        half_d = 0.5 * p[1]
        if ax < half_d:
            i = min(int(ax * p[6]), int(p[5]) - 1)
            u = _cubic(coef, i, ax - i * p[10])
        elif ax < p[9]:
            n1 = int(p[5])
            t = (ax - half_d) * p[8]
            i = min(int(t), int(p[7]) - 1)
            u = _cubic(coef, n1 + i, ax - half_d - i * p[11])
        else:
            k = p[2]
            u = p[4] * k / math.tan(k * (ax - 0.5 * p[0]))
        return u if x >= 0.0 else -u
    if kind == 2:
        x_first = p[0]
        t = (x - x_first) * p[1]
        if t < 0.0:
            return p[4]
        i = int(t)
        if i >= int(p[2]):
            return p[5]
        dx = (t - i) * p[6]
        return p[3] * ((3.0 * coef[0, i] * dx + 2.0 * coef[1, i]) * dx + coef[2, i])
    return 0.0


@nb.njit(cache=True)
def _potential(code, q, x):
    if code == 1:
        return q[2] if abs(x) < 0.5 * q[1] else 0.0
    if code == 2:
        y = abs(x) / q[2] - q[3]
        e = math.exp(-2.0 * abs(y))
        return q[0] * math.tanh(y) - q[1] * 4.0 * e / ((1.0 + e) * (1.0 + e))
    return 0.0


@nb.njit(cache=True, error_model="numpy")
def _drift_many(kind, p, coef, xs):
    out = np.empty(xs.size)
    for i in range(xs.size):
        out[i] = _drift(kind, p, coef, xs[i])
    return out


@nb.njit(cache=True, error_model="numpy", inline="always")
def _step(kind, p, coef, x, u, key, dt, sdt, umax, wall):
    """One move from ``x`` given its drift ``u``; returns (x, key, clamped).

    Inside a layer of 5 noise widths next to a hard wall the 1/eps part of
    the drift is integrated exactly as a three-dimensional Bessel step and
    only the smooth remainder is applied as an Euler increment. Outside the
    layer the move is a plain Euler-Maruyama step with the drift clamped.
    """
    if kind == 1 and wall > 0.0:
        eps = wall - abs(x)
        if eps < 5.0 * sdt:
            k = p[2]
            rest = p[4] * (k / math.tan(k * eps) - 1.0 / eps)
            key, z1 = normal(key)
            key, z2 = normal(key)
            key, z3 = normal(key)
            a = eps + sdt * z1
            eps = math.sqrt(a * a + sdt * sdt * (z2 * z2 + z3 * z3)) + rest * dt
            return math.copysign(wall - eps, x), key, 0
    c = 0
    if u > umax:
        u = umax
        c = 1
    elif u < -umax:
        u = -umax
        c = 1
    key, xi = normal(key)
    return x + u * dt + sdt * xi, key, c


@nb.njit(cache=True, error_model="numpy")
def _advance(x, key, n_steps, kind, p, coef, dt, sdt, umax, x_abs, x_ref, wall,
             pot_code, q, half_mass, stride, out):
    """Advance one trajectory by at most ``n_steps`` steps.

    Returns (x, key, steps_taken, status, clamped, n_recorded, energy_sum).
    """
    clamped = 0
    j = 0
    e_sum = 0.0
    for n in range(n_steps):
        u = _drift(kind, p, coef, x)
        if pot_code >= 0:
            e_sum += half_mass * u * u + _potential(pot_code, q, x)
        if stride > 0 and n % stride == 0 and j < out.size:
            out[j] = x
            j += 1
        x, key, c = _step(kind, p, coef, x, u, key, dt, sdt, umax, wall)
        clamped += c
        if x != x:
            return x, key, n + 1, _STATUS_NAN, clamped, j, e_sum
        if wall > 0.0:
            if x >= wall:
                x = 2.0 * wall - x
            elif x <= -wall:
                x = -2.0 * wall - x
            if abs(x) >= wall:
                x = math.copysign(wall * (1.0 - 1e-12), x)
        if x < x_ref:
            x = 2.0 * x_ref - x
        if x >= x_abs:
            return x, key, n + 1, _STATUS_CROSSED, clamped, j, e_sum
    return x, key, n_steps, _STATUS_RUNNING, clamped, j, e_sum


@nb.njit(cache=True, error_model="numpy")
def _advance_lanes(x, keys, steps, clamped, status, max_steps, kind, p, coef, dt, sdt, umax,
                   x_abs, x_ref, wall):
    """Step every running lane (status 0) until at least one stops.

    Each lane performs exactly the arithmetic of ``_advance`` on its own
    noise stream. Lanes end with status 1 (absorbed), 2 (NaN) or 3 (timeout).
    """
    n_lanes = x.size
    while True:
        active = 0
        done = False
        for j in range(n_lanes):
            if status[j] != 0:
                continue
            active += 1
            xx = x[j]
            u = _drift(kind, p, coef, xx)
            xx, kj, c = _step(kind, p, coef, xx, u, keys[j], dt, sdt, umax, wall)
            keys[j] = kj
            clamped[j] += c
            steps[j] += 1
            if xx != xx:
                status[j] = _STATUS_NAN
                done = True
                x[j] = xx
                continue
            if wall > 0.0:
                if xx >= wall:
                    xx = 2.0 * wall - xx
                elif xx <= -wall:
                    xx = -2.0 * wall - xx
                if abs(xx) >= wall:
                    xx = math.copysign(wall * (1.0 - 1e-12), xx)
            if xx < x_ref:
                xx = 2.0 * x_ref - xx
            x[j] = xx
            if xx >= x_abs:
                status[j] = _STATUS_CROSSED
                done = True
            elif steps[j] >= max_steps:
                status[j] = _STATUS_TIMEOUT
                done = True
        if done or active == 0:
            return


# ---------------------------------------------------------------------------
# drift field


def _hermite_coef(x, y, dy) -> np.ndarray:
    """Power-basis coefficients (highest first) of the cubic Hermite pieces."""
    h = np.diff(x)
    slope = np.diff(y) / h
    c0 = (dy[:-1] + dy[1:] - 2.0 * slope) / h**2
    c1 = (3.0 * slope - 2.0 * dy[:-1] - dy[1:]) / h
    return np.vstack([c0, c1, dy[:-1], y[:-1]])


def _square_exact(x, b, d, k, kap, s2):
    """Closed-form drift (hbar/m) psi'/psi of the even square-well state and its derivative."""
    ax = np.abs(x)
    sg = np.where(x >= 0, 1.0, -1.0)
    inner = ax < 0.5 * d
    arg = np.where(inner, 0.0, k * (ax - 0.5 * b))
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(inner, s2 * kap * np.tanh(kap * ax), s2 * k / np.tan(arg))
        du = np.where(inner, s2 * kap**2 / np.cosh(kap * ax) ** 2, -s2 * k**2 / np.sin(arg) ** 2)
    return sg * u, du


def _square_table(well: SquareDoubleWell, k: float, kap: float, s2: float, per_unit: int = 1000):
    """Cubic Hermite table of the closed-form drift on x >= 0.

    Nodes carry exact values and slopes; the barrier edge is a node, so the
    jump in u' there is represented exactly. Within L/100 of the wall the
    kernel falls back to the exact cotangent.
    """
    half_d, L = 0.5 * well.d, well.L
    x_cut = 0.5 * well.b - 0.01 * L
    n1 = max(64, int(math.ceil(half_d * per_unit / L * 2)))
    n2 = max(64, int(math.ceil((x_cut - half_d) * per_unit / L * 2)))
    xb = np.linspace(0.0, half_d, n1 + 1)
    xw = np.linspace(half_d, x_cut, n2 + 1)
    ub, dub = _square_exact(xb, well.b, well.d, k, kap, s2)
    # evaluate the well branch at the edge node itself (one-sided values)
    uw = s2 * k / np.tan(k * (xw - 0.5 * well.b))
    duw = -s2 * k**2 / np.sin(k * (xw - 0.5 * well.b)) ** 2
    ub[-1] = s2 * kap * math.tanh(kap * half_d)
    dub[-1] = s2 * kap**2 / math.cosh(kap * half_d) ** 2
    coef = np.ascontiguousarray(np.hstack([_hermite_coef(xb, ub, dub), _hermite_coef(xw, uw, duw)]))
    h1, h2 = half_d / n1, (x_cut - half_d) / n2
    params = np.array([well.b, well.d, k, kap, s2, n1, 1.0 / h1, n2, 1.0 / h2, x_cut, h1, h2])
    return params, coef


@dataclass(frozen=True, eq=False)
class OsmoticField:
    """Osmotic drift of a nodeless stationary state.

    ``params`` and ``coef`` are the packed arrays read by the compiled
    kernel; ``wall`` is the half-width of hard walls (0 when absent).
    """

    kind: FieldKind
    params: np.ndarray
    coef: np.ndarray
    hbar_over_m: float
    mass: float
    wall: float = 0.0
    potential: Optional[object] = None
    source_energy: Optional[float] = None

    @classmethod
    def free(cls, units: Optional[UnitSystem] = None) -> "OsmoticField":
        """u = 0 everywhere (driftless diffusion)."""
        units = units or UnitSystem.dimensionless()
        return cls(FieldKind.FREE, np.zeros(7), np.zeros((4, 1)), units.hbar_over_m, units.mass)

    @classmethod
    def from_state(cls, state: BoundState, potential=None, trim: float = 1e-150) -> "OsmoticField":
        """Closed-form drift for square-well states, interpolated drift otherwise.

        Grid states are interpolated through a monotone cubic of ln(psi^2)
        on the samples with |psi| > ``trim`` * max|psi|; outside that range
        ln(psi^2) is continued linearly, so the drift is held constant.
        """
        if state.parity is not Parity.EVEN or state.nodes != 0:
            raise DomainError("the drift field needs a nodeless (ground) state")
        units = state.units
        pot = potential if potential is not None else state.potential
        if state.wavenumber is not None and isinstance(pot, SquareDoubleWell):
            params, coef = _square_table(pot, state.wavenumber, state.kappa, units.hbar_over_m)
            return cls(FieldKind.CLOSED_FORM, params, coef, units.hbar_over_m, units.mass,
                       wall=0.5 * pot.b, potential=pot, source_energy=state.energy)
        x, psi = state.grid, np.abs(state.psi)
        keep = psi > trim * psi.max()
        idx = np.nonzero(keep)[0]
        lo, hi = idx[0], idx[-1] + 1
        if not np.all(keep[lo:hi]):
            raise DomainError("density underflows inside the support of the state")
        xs = x[lo:hi]
        spline = PchipInterpolator(xs, 2.0 * np.log(psi[lo:hi]))
        coef = np.ascontiguousarray(spline.c)
        half = 0.5 * units.hbar_over_m
        h = float(xs[1] - xs[0])
        u_left = half * float(coef[2, 0])
        u_right = half * float(spline.derivative()(xs[-1]))
        params = np.array([xs[0], 1.0 / h, coef.shape[1], half, u_left, u_right, h])
        return cls(FieldKind.GRID, params, coef, units.hbar_over_m, units.mass,
                   potential=pot, source_energy=state.energy)

    def __call__(self, x):
        return osmotic_velocity(self, x)

    def describe(self) -> dict:
        """Content identifying the field, used in provenance digests."""
        out = {"kind": self.kind.value, "params": self.params.tolist(), "hbar_over_m": self.hbar_over_m,
               "mass": self.mass, "wall": self.wall, "energy": self.source_energy}
        if self.kind is FieldKind.GRID:
            out["coef_digest"] = digest({"c": self.coef.ravel().tolist()})
        if self.potential is not None and hasattr(self.potential, "to_dict"):
            out["potential"] = self.potential.to_dict()
        return out


def osmotic_velocity(fld: OsmoticField, x):
    """u(x) for scalar or array ``x``."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(np.isnan(xa)):
        raise DomainError("NaN position")
    if fld.wall > 0 and np.any(np.abs(xa) >= fld.wall):
        raise InfiniteWallError("osmotic velocity requested inside the infinite wall")
    if fld.kind is FieldKind.CLOSED_FORM:
        b, d, k, kap, s2 = fld.params[:5]
        u = _square_exact(xa, b, d, k, kap, s2)[0]
    else:
        u = _drift_many(_KIND_CODE[fld.kind], fld.params, fld.coef, xa)
    return float(u[0]) if np.ndim(x) == 0 else u


def kernel_velocity(fld: OsmoticField, x) -> np.ndarray:
    """The drift exactly as the compiled stepper evaluates it (tabulated for square wells)."""
    return _drift_many(_KIND_CODE[fld.kind], fld.params, fld.coef, np.atleast_1d(np.asarray(x, dtype=float)))


def _pot_code(potential) -> tuple[int, np.ndarray]:
    if isinstance(potential, SquareDoubleWell):
        return 1, np.array([potential.b, potential.d, potential.V0, 0.0])
    if isinstance(potential, RosenMorseDouble):
        return 2, np.array([potential.A, potential.B, potential.d, potential.k])
    if potential is None:
        return 0, np.zeros(4)
    raise DomainError(f"no compiled evaluator for {type(potential).__name__}")


def instantaneous_energy(fld: OsmoticField, x, potential=None):
    """(m/2) u(x)^2 + V(x)."""
    pot = potential if potential is not None else fld.potential
    u = osmotic_velocity(fld, x)
    v = pot(x) if pot is not None else 0.0
    return 0.5 * fld.mass * np.square(u) + v


@dataclass(frozen=True, eq=False)
class EnergySeries:
    """Instantaneous energy sampled along a path; ``mean`` is the average over every step."""

    times: np.ndarray
    energies: np.ndarray
    mean: float


# ---------------------------------------------------------------------------
# configuration and single trajectories


@dataclass(frozen=True)
class TrajectoryConfig:
    """Step size, seed, start point and stopping rule of one simulation.

    Trajectories start at ``x_init`` and are absorbed on reaching
    ``absorb_at`` from the left. ``reflect_at`` adds a reflecting point on
    the left (None leaves only the walls of the field, if any); starting on
    it is allowed.
    """

    dt: float
    seed: int
    x_init: float
    absorb_at: float
    reflect_at: Optional[float] = None
    max_steps: int = 10**8
    record_stride: int = 0
    expected_mfpt: Optional[float] = None
    allow_short_timeout: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        lo = -math.inf if self.reflect_at is None else self.reflect_at
        if not lo <= self.x_init < self.absorb_at:
            raise DomainError(f"need reflect_at <= x_init < absorb_at, got {self.reflect_at}, {self.x_init}, {self.absorb_at}")
        if self.max_steps < 1 or self.record_stride < 0:
            raise DomainError("max_steps must be positive and record_stride non-negative")
        if (self.expected_mfpt is not None and not self.allow_short_timeout
                and self.max_steps * self.dt < 50.0 * self.expected_mfpt):
            raise DomainError("max_steps * dt is below 50 expected first-passage times; "
                              "raise max_steps or set allow_short_timeout")

    @staticmethod
    def default_max_steps(tau_estimate: float, dt: float) -> int:
        return int(math.ceil(100.0 * tau_estimate / dt))

    def to_dict(self) -> dict:
        return asdict(self)


def clamp_velocity(fld: OsmoticField, dt: float) -> float:
    """Drift bound: one clamped step moves at most ten noise standard deviations."""
    return CLAMP_SIGMAS * math.sqrt(fld.hbar_over_m / dt)


@dataclass(frozen=True, eq=False)
class FirstPassage:
    """Outcome of one trajectory. ``tau`` is NaN when it timed out."""

    tau: float
    steps: int
    clamped_steps: int
    timed_out: bool
    times: Optional[np.ndarray] = None
    path: Optional[np.ndarray] = None
    energy: Optional[EnergySeries] = None


def _kernel_args(fld: OsmoticField, cfg: TrajectoryConfig):
    sdt = math.sqrt(fld.hbar_over_m * cfg.dt)
    x_ref = -math.inf if cfg.reflect_at is None else float(cfg.reflect_at)
    return (_KIND_CODE[fld.kind], fld.params, fld.coef, cfg.dt, sdt, clamp_velocity(fld, cfg.dt),
            float(cfg.absorb_at), x_ref, float(fld.wall))


def _check_start(fld: OsmoticField, cfg: TrajectoryConfig) -> None:
    if fld.wall > 0 and (abs(cfg.x_init) >= fld.wall or cfg.absorb_at >= fld.wall):
        raise InfiniteWallError("start or absorbing point inside the infinite wall")


_CHUNK = 1 << 20


def simulate_first_passage(cfg: TrajectoryConfig, fld: OsmoticField, trajectory_id: int = 0,
                           record_energy: bool = False) -> FirstPassage:
    """Run one trajectory until absorption or ``max_steps``.

    With ``record_stride > 0`` the position every ``record_stride`` steps is
    kept; ``record_energy`` then adds the instantaneous energy of each
    sample (the field must carry its potential).
    """
    _check_start(fld, cfg)
    key = stream_key(cfg.seed, trajectory_id)
    kind, p, coef, dt, sdt, umax, x_abs, x_ref, wall = _kernel_args(fld, cfg)
    stride = cfg.record_stride
    empty = np.empty(0)
    if stride == 0:
        x, key, steps, status, clamped, _, _ = _advance(float(cfg.x_init), key, cfg.max_steps, kind, p, coef, dt,
                                                        sdt, umax, x_abs, x_ref, wall, -1, empty, 0.0, 0, empty)
        chunks = None
    else:
        # chunked so the path buffer stays bounded; the noise stream is unchanged
        x, steps, clamped, status = float(cfg.x_init), 0, 0, _STATUS_RUNNING
        chunks = []
        while steps < cfg.max_steps and status == _STATUS_RUNNING:
            n = min(_CHUNK * stride, cfg.max_steps - steps)
            buf = np.empty(n // stride + 1)
            x, key, taken, status, c, j, _ = _advance(x, np.uint64(key), n, kind, p, coef, dt, sdt, umax, x_abs, x_ref, wall,
                                                       -1, empty, 0.0, stride, buf)
            # the sample index restarts each chunk; n is a multiple of stride except in the last chunk
            chunks.append(buf[:j])
            steps += taken
            clamped += c
    if status == _STATUS_NAN:
        raise NumericalFailure(f"non-finite position at step {steps} of trajectory {trajectory_id}")
    timed_out = status != _STATUS_CROSSED
    tau = math.nan if timed_out else steps * dt
    if chunks is None:
        return FirstPassage(tau, steps, clamped, timed_out)
    path = np.concatenate(chunks) if chunks else np.empty(0)
    times = np.arange(path.size) * stride * dt
    energy = None
    if record_energy:
        e = instantaneous_energy(fld, path)
        energy = EnergySeries(times, e, float(np.mean(e)))
    return FirstPassage(tau, steps, clamped, timed_out, times, path, energy)


@dataclass(frozen=True, eq=False)
class StationaryRun:
    """Long free-running trajectory: samples, energy statistics and clamp count."""

    positions: np.ndarray
    energy: EnergySeries
    clamped_steps: int
    n_steps: int


def simulate_stationary(fld: OsmoticField, x_init: float, n_steps: int, dt: float, seed: int,
                        record_stride: int = 10, trajectory_id: int = 0) -> StationaryRun:
    """Run without absorption for ``n_steps`` steps.

    ``energy.mean`` averages the instantaneous energy over every step; the
    recorded samples are every ``record_stride``-th position.
    """
    if fld.potential is None:
        raise DomainError("the field carries no potential; energies need one")
    if fld.wall > 0 and abs(x_init) >= fld.wall:
        raise InfiniteWallError("start point inside the infinite wall")
    if record_stride < 1:
        raise DomainError("record_stride must be at least 1")
    code, q = _pot_code(fld.potential)
    key = stream_key(seed, trajectory_id)
    sdt = math.sqrt(fld.hbar_over_m * dt)
    x, steps, clamped, e_total = float(x_init), 0, 0, 0.0
    chunks = []
    while steps < n_steps:
        n = min(_CHUNK * record_stride, n_steps - steps)
        buf = np.empty(n // record_stride + 1)
        x, key, taken, status, c, j, e_sum = _advance(
            x, np.uint64(key), n, _KIND_CODE[fld.kind], fld.params, fld.coef, dt, sdt, clamp_velocity(fld, dt),
            math.inf, -math.inf, float(fld.wall), code, q, 0.5 * fld.mass, record_stride, buf)
        if status == _STATUS_NAN:
            raise NumericalFailure(f"non-finite position at step {steps + taken}")
        chunks.append(buf[:j])
        steps += taken
        clamped += c
        e_total += e_sum
    pos = np.concatenate(chunks)
    e = instantaneous_energy(fld, pos)
    series = EnergySeries(np.arange(pos.size) * record_stride * dt, e, e_total / steps)
    return StationaryRun(pos, series, clamped, steps)


def ks_distance(positions, state: BoundState) -> float:
    """Kolmogorov-Smirnov distance between sampled positions and |psi|^2."""
    cdf = cumulative_trapezoid(state.density, state.grid, initial=0.0)
    cdf /= cdf[-1]
    return float(stats.kstest(np.asarray(positions), lambda q: np.interp(q, state.grid, cdf)).statistic)


# ---------------------------------------------------------------------------
# ensembles

RECORD_DTYPE = np.dtype([("trajectory_id", "<i8"), ("seed", "<u8"), ("tau", "<f8"),
                         ("clamped_steps", "<i8"), ("timed_out", "?")])


def _run_ids(args) -> np.ndarray:
    fld, cfg, ids = args
    kind, p, coef, dt, sdt, umax, x_abs, x_ref, wall = _kernel_args(fld, cfg)
    rec = np.zeros(len(ids), dtype=RECORD_DTYPE)
    n_lanes = min(LANES, len(ids))
    if n_lanes == 0:
        return rec
    x = np.full(n_lanes, float(cfg.x_init))
    steps = np.zeros(n_lanes, dtype=np.int64)
    clamped = np.zeros(n_lanes, dtype=np.int64)
    status = np.zeros(n_lanes, dtype=np.int64)
    slot = list(range(n_lanes))  # position in ``ids`` served by each lane
    keys = np.array([stream_key(cfg.seed, ids[r]) for r in slot], dtype=np.uint64)
    nxt = n_lanes
    while True:
        _advance_lanes(x, keys, steps, clamped, status, cfg.max_steps, kind, p, coef, dt, sdt, umax,
                       x_abs, x_ref, wall)
        for j in range(n_lanes):
            st = status[j]
            if st in (_STATUS_RUNNING, -1):
                continue
            tid = ids[slot[j]]
            if st == _STATUS_NAN:
                raise NumericalFailure(f"non-finite position at step {steps[j]} of trajectory {tid}")
            crossed = st == _STATUS_CROSSED
            rec[slot[j]] = (tid, cfg.seed, steps[j] * dt if crossed else math.nan, clamped[j], not crossed)
            if nxt < len(ids):
                slot[j] = nxt
                keys[j] = stream_key(cfg.seed, ids[nxt])
                x[j], steps[j], clamped[j], status[j] = cfg.x_init, 0, 0, _STATUS_RUNNING
                nxt += 1
            else:
                status[j] = -1
        if np.all(status == -1):
            return rec


@dataclass(frozen=True, eq=False)
class EnsembleRun:
    """Per-trajectory records plus the summarizing ensemble."""

    ensemble: FptEnsemble
    records: np.ndarray

    @property
    def clamped_steps(self) -> int:
        return int(self.records["clamped_steps"].sum())

    def write_records(self, path, header: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header)
            w = csv.writer(fh)
            w.writerow(RECORD_DTYPE.names)
            for r in self.records:
                w.writerow([int(r["trajectory_id"]), int(r["seed"]), f"{r['tau']:.17g}",
                            int(r["clamped_steps"]), int(r["timed_out"])])


def ensemble_digest(fld: OsmoticField, cfg: TrajectoryConfig, n: int) -> str:
    return digest({"field": fld.describe(), "config": cfg.to_dict(), "n": n})


def run_ensemble(fld: OsmoticField, cfg: TrajectoryConfig, n: int, workers: Optional[int] = None,
                 ids: Optional[Sequence[int]] = None, chunk_size: int = 256) -> EnsembleRun:
    """First-passage times of trajectories ``0..n-1`` (or the given ``ids``).

    Work is split into fixed chunks of trajectory ids and merged in id
    order, so results do not depend on ``workers``.
    """
    _check_start(fld, cfg)
    if cfg.record_stride:
        raise DomainError("ensembles store first-passage times only; set record_stride = 0")
    ids = np.arange(n, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    workers = workers or os.cpu_count() or 1
    chunks = [(fld, cfg, ids[i:i + chunk_size]) for i in range(0, ids.size, chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_ids, chunks))
    else:
        parts = [_run_ids(c) for c in chunks]
    records = np.concatenate(parts) if parts else np.zeros(0, dtype=RECORD_DTYPE)
    done = records[~records["timed_out"]]
    ens = FptEnsemble(done["tau"], int(records["timed_out"].sum()), ensemble_digest(fld, cfg, int(ids.size)),
                      int(records["clamped_steps"].sum()),
                      {"dt": cfg.dt, "seed": cfg.seed, "x_init": cfg.x_init, "absorb_at": cfg.absorb_at,
                       "reflect_at": cfg.reflect_at, "max_steps": cfg.max_steps, "n_requested": int(ids.size)})
    return EnsembleRun(ens, records)


def write_trajectory(path, run: FirstPassage, fld: OsmoticField, stride: int, dt: float,
                     header: Optional[str] = None) -> None:
    """CSV columns step, t, x, u, E for a recorded path."""
    if run.path is None:
        raise DomainError("trajectory was run without recording")
    u = osmotic_velocity(fld, run.path)
    e = instantaneous_energy(fld, run.path) if fld.potential is not None else np.full_like(u, math.nan)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["step", "t", "x", "u", "E"])
        for i in range(run.path.size):
            w.writerow([i * stride, f"{i * stride * dt:.17g}", f"{run.path[i]:.17g}", f"{u[i]:.17g}", f"{e[i]:.17g}"])
