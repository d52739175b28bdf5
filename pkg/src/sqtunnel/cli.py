"""Command-line interface: ``sqtunnel <subcommand> [config.ini] [options]``.

Every subcommand reads an optional INI file, applies command-line
overrides, writes its outputs atomically into the output directory
together with ``manifest.json`` and prints a one-line summary. Failures
print a JSON error object on stderr and exit with a nonzero status.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import enum
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import ammonia as amm
from .closed_forms import (SquareWellClosedForm, dsw_d_scan, dsw_k0_scan, dsw_mean_tau, exact_square_doublet,
                           wkb_quantities)
from .eigensolver import (BoundState, Parity, default_grid, numerov_bound_state, numerov_levels,
                          solve_square_levels, spectrum_pair, square_bound_state)
from .errors import ConfigError, SqtError, StageError, UnitError
from .first_passage import (digest, fit_exponential_tail, mfpt_high_barrier_quadrature, mfpt_profile,
                            mfpt_quadrature, survival_decay_rate)
from .potentials import RosenMorseDouble, SquareDoubleWell, potential_from_config, turning_points
from .stochastic_dynamics import (DEFAULT_SEED, OsmoticField, TrajectoryConfig, instantaneous_energy,
                                  ks_distance, osmotic_velocity, run_ensemble, simulate_first_passage,
                                  simulate_stationary)
from .units import Mode, UnitSystem

SCHEMA_VERSION = 1
OUT_ENV = "SQTUNNEL_OUT"
SUBCOMMANDS = ("solve", "mfpt", "simulate", "ensemble", "tail-fit", "dsw-scan", "wkb", "ratio-scan", "ammonia")

# ---------------------------------------------------------------------------
# configuration schema

_FLOAT, _INT, _STR = float, int, str
_LIST = "list"  # comma-separated floats, or start:stop:count


SCHEMA: dict[str, dict[str, object]] = {
    "run": {"seed": _INT, "workers": _INT, "grid_points": _INT},
    "potential": {"family": _STR, "units": _STR, "b": _FLOAT, "d": _FLOAT, "V0": _FLOAT, "A": _FLOAT,
                  "B": _FLOAT, "k": _FLOAT, "m_H": _FLOAT, "m_N": _FLOAT},
    "state": {"level": _INT},
    "mfpt": {"a": _STR, "x_start": _FLOAT, "x_end": _FLOAT, "profile_points": _INT},
    "simulation": {"mode": _STR, "dt": _FLOAT, "dt_ps": _FLOAT, "x_init": _FLOAT, "absorb_at": _FLOAT,
                   "reflect_at": _FLOAT, "max_steps": _INT, "record_stride": _INT, "n_steps": _INT,
                   "trajectory_id": _INT},
    "ensemble": {"n": _INT, "dt": _FLOAT, "dt_ps": _FLOAT, "x_init": _FLOAT, "absorb_at": _FLOAT,
                 "reflect_at": _FLOAT, "max_steps": _INT, "chunk_size": _INT, "bins": _INT,
                 "tail_threshold": _FLOAT},
    "tail": {"input": _STR, "threshold": _FLOAT, "min_samples": _INT, "bins": _INT},
    "scan": {"kind": _STR, "b": _FLOAT, "d_values": _LIST, "k0_values": _LIST, "V0_values": _LIST},
    "wkb": {"energy": _FLOAT},
    "ratio": {"A": _FLOAT, "d": _FLOAT, "k": _FLOAT, "B_min": _FLOAT, "B_max": _FLOAT, "B_count": _INT,
              "points_meV": _LIST, "stop_points": _INT, "m_H": _FLOAT, "m_N": _FLOAT},
    "ammonia": {"delta_e0": _FLOAT, "delta_e1": _FLOAT, "pair_gap": _FLOAT, "d_angstrom": _FLOAT, "k": _FLOAT,
                "m_H": _FLOAT, "m_N": _FLOAT, "fit_mode": _STR, "A_anchor": _FLOAT, "A_min": _FLOAT,
                "A_max": _FLOAT, "B_min": _FLOAT, "B_max": _FLOAT, "A": _FLOAT, "B": _FLOAT},
}

_DEFAULT_SQUARE = {"family": "square", "b": 6.0, "d": 2.0, "V0": 2.0}
_DEFAULT_RM = {"family": "rosen_morse", "units": "spectroscopic", "A": 398.0, "B": 2810.0, "d": 0.17, "k": 2.22}


def _parse_list(text: str) -> list[float]:
    text = text.strip()
    if text.count(":") == 2 and "," not in text:
        lo, hi, n = text.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(n))]
    return [float(v) for v in text.split(",") if v.strip()]


def _convert(section: str, key: str, raw: str):
    kind = SCHEMA[section][key]
    try:
        if kind == _LIST:
            return _parse_list(raw)
        if kind is _INT:
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind is _FLOAT:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for key {key!r} in section [{section}]") from None


def load_config(path: Optional[str], overrides: Optional[list[str]] = None) -> dict[str, dict]:
    """Parse an INI file plus ``section.key=value`` overrides against :data:`SCHEMA`.

    Raises
    ------
    ConfigError
        On an unknown section or key (the message names it) or a malformed value.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file {path!r} not found")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    cfg: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            cfg.setdefault(section, {})[key] = _convert(section, key, raw)
    for item in overrides or []:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        cfg.setdefault(section, {})[key] = _convert(section, key, raw)
    return cfg


# ---------------------------------------------------------------------------
# output plumbing


def _num(v) -> str:
    f = float(v)
    return format(f, ".17g") if math.isfinite(f) else "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits (non-finite values become null)."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj) if math.isfinite(float(obj)) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, enum.Enum):
        return json.dumps(obj.value)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{inner}{to_json(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _header(schema: str) -> str:
    return f"# schema: sqtunnel.{schema}/{SCHEMA_VERSION}\n"


@dataclass
class RunManifest:
    """Provenance of one invocation; ``outputs`` lists every file with its role."""

    subcommand: str
    config_digest: str
    seed: int
    artifact_version: str
    outputs: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"schema": f"sqtunnel.manifest/{SCHEMA_VERSION}"}
        out.update(asdict(self))
        return out


class OutputDir:
    """Atomic writer: each file is written to a temporary name and renamed into place."""

    def __init__(self, root: Path, manifest: RunManifest):
        self.root = root
        self.manifest = manifest

    def _place(self, name: str, role: str, write: Callable[[Path], None], listed: bool = True) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        final = self.root / name
        tmp = self.root / f".{name}.{os.getpid()}.tmp"
        try:
            write(tmp)
            os.replace(tmp, final)
        finally:
            if tmp.exists():
                tmp.unlink()
        if listed:
            self.manifest.outputs.append({"path": name, "role": role})
        return final

    def json(self, name: str, role: str, schema: str, payload: dict, listed: bool = True) -> Path:
        body = {"schema": f"sqtunnel.{schema}/{SCHEMA_VERSION}"}
        body.update(payload)
        return self._place(name, role, lambda p: p.write_text(to_json(body) + "\n"), listed)

    def rows(self, name: str, role: str, schema: str, rows: list[dict]) -> Path:
        def write(p: Path):
            with open(p, "w", newline="") as fh:
                fh.write(_header(schema))
                if not rows:
                    return
                w = csv.writer(fh)
                cols = list(rows[0])
                w.writerow(cols)
                for r in rows:
                    w.writerow([_cell(r[c]) for c in cols])

        return self._place(name, role, write)

    def custom(self, name: str, role: str, schema: str, writer: Callable[[Path, str], None]) -> Path:
        return self._place(name, role, lambda p: writer(p, _header(schema)))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return v


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__

        return __version__


# ---------------------------------------------------------------------------
# shared builders


@dataclass
class Context:
    subcommand: str
    cfg: dict
    seed: int
    workers: Optional[int]
    grid_points: Optional[int]
    out: OutputDir

    def section(self, name: str) -> dict:
        return self.cfg.get(name, {})


def _potential(ctx: Context, default: dict):
    given = ctx.section("potential")
    if given and "family" not in given:
        raise ConfigError("section [potential] needs a 'family' key")
    return potential_from_config(given or default)


def _state(pot, units: UnitSystem, level: int, grid_points: Optional[int]) -> BoundState:
    if level not in (0, 1):
        raise ConfigError("state.level must be 0 (ground) or 1 (first excited)")
    if isinstance(pot, SquareDoubleWell):
        lv = solve_square_levels(pot, units)
        k, parity = (lv.k_even, Parity.EVEN) if level == 0 else (lv.k_odd, Parity.ODD)
        return square_bound_state(pot, k, parity, units, n_points=grid_points or 12001)
    return numerov_bound_state(pot, units, level, default_grid(pot, units, grid_points or 8001))


def _default_window(pot, state: BoundState) -> tuple[Optional[float], float, float]:
    """(reflecting end, start, absorbing point) used when the config gives none."""
    if isinstance(pot, SquareDoubleWell):
        c = 0.25 * (pot.b + pot.d)  # well centres
        return -0.5 * pot.b, -c, c
    b = turning_points(pot, state.energy).b_inner
    return None, -b, b


def _dt(ctx: Context, section: dict, units: UnitSystem, default: float) -> float:
    if "dt" in section and "dt_ps" in section:
        raise UnitError("give either dt or dt_ps, not both")
    if "dt_ps" in section:
        if units.mode is not Mode.SPECTROSCOPIC:
            raise UnitError("dt_ps given for a potential in dimensionless units")
        return float(section["dt_ps"])
    return float(section.get("dt", default))


def _reflect(raw, default):
    if raw is None:
        return default
    if isinstance(raw, str) and raw.strip().lower() in ("grid", "none", ""):
        return None
    return float(raw)


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(ctx: Context) -> str:
    pot, units = _potential(ctx, _DEFAULT_SQUARE)
    level = int(ctx.section("state").get("level", 0))
    state = _state(pot, units, level, ctx.grid_points)
    payload = {"potential": pot.to_dict(), "units": units.to_dict(), "level": level, "energy": state.energy,
               "parity": state.parity.value, "nodes": state.nodes}
    if isinstance(pot, SquareDoubleWell):
        lv = solve_square_levels(pot, units)
        doublet = exact_square_doublet(pot, units)
        payload.update(k_even=lv.k_even, k_odd=lv.k_odd, delta_e=doublet.delta_e, period=doublet.period)
        summary = f"E={state.energy:.6g} dE={doublet.delta_e:.6g}"
    else:
        w = numerov_levels(pot, units, 4, default_grid(pot, units, ctx.grid_points or 8001))
        pairs = [spectrum_pair(w[0], w[1], units), spectrum_pair(w[2], w[3], units)]
        payload.update(levels=list(w), doublets=[asdict(p) for p in pairs])
        summary = f"E={state.energy:.6g} dE0={pairs[0].delta_e:.6g} dE1={pairs[1].delta_e:.6g}"
    ctx.out.json("levels.json", "levels", "solve", payload)
    ctx.out.custom("state.csv", "wavefunction", "state", lambda p, h: state.to_csv(p, header=h))
    return summary


def cmd_mfpt(ctx: Context) -> str:
    pot, units = _potential(ctx, _DEFAULT_SQUARE)
    state = _state(pot, units, 0, ctx.grid_points)
    sec = ctx.section("mfpt")
    a0, s0, e0 = _default_window(pot, state)
    a = _reflect(sec.get("a"), a0)
    x_start, x_end = float(sec.get("x_start", s0)), float(sec.get("x_end", e0))
    tau = mfpt_quadrature(state, a, x_start, x_end)
    a_eff = state.grid[0] if a is None else a
    payload = {"potential": pot.to_dict(), "energy": state.energy, "a": a_eff, "x_start": x_start,
               "x_end": x_end, "tau_bar": tau,
               "decay_time": 1.0 / survival_decay_rate(state, a, x_end)}
    if isinstance(pot, SquareDoubleWell):
        payload["tau_bar_barrier_edges"] = dsw_mean_tau(SquareWellClosedForm.from_well(pot, units))
    else:
        hb = mfpt_high_barrier_quadrature(state, pot)
        payload["high_barrier"] = asdict(hb)
    ctx.out.json("mfpt.json", "mean first-passage time", "mfpt", payload)
    n_prof = int(sec.get("profile_points", 0))
    if n_prof > 0:
        starts = np.linspace(a_eff, x_end, n_prof + 2)[1:-1]
        taus = mfpt_profile(state, a, x_end, starts)
        ctx.out.rows("mfpt_profile.csv", "tau(x) profile", "mfpt-profile",
                     [{"x": float(x), "tau": float(t)} for x, t in zip(starts, taus)])
    return f"tau_bar={tau:.8g} decay_time={payload['decay_time']:.6g}"


def _trajectory_config(ctx: Context, sec: dict, pot, units, state, default_dt: float, tau: float,
                       stride: int = 0) -> TrajectoryConfig:
    a0, s0, e0 = _default_window(pot, state)
    dt = _dt(ctx, sec, units, default_dt)
    reflect = sec.get("reflect_at")
    return TrajectoryConfig(
        dt=dt, seed=ctx.seed, x_init=float(sec.get("x_init", s0)), absorb_at=float(sec.get("absorb_at", e0)),
        reflect_at=None if reflect is None else float(reflect),
        max_steps=int(sec.get("max_steps", TrajectoryConfig.default_max_steps(tau, dt))),
        record_stride=stride, expected_mfpt=tau if "max_steps" not in sec else None)


def _default_dt(units: UnitSystem) -> float:
    return 1e-5 if units.mode is Mode.SPECTROSCOPIC else 1e-4


def _path_rows(fld: OsmoticField, path: np.ndarray, stride: int, dt: float) -> list[dict]:
    u = osmotic_velocity(fld, path)
    e = instantaneous_energy(fld, path)
    return [{"step": i * stride, "t": i * stride * dt, "x": float(path[i]), "u": float(u[i]), "E": float(e[i])}
            for i in range(path.size)]


def cmd_simulate(ctx: Context) -> str:
    pot, units = _potential(ctx, _DEFAULT_SQUARE)
    state = _state(pot, units, 0, ctx.grid_points)
    fld = OsmoticField.from_state(state, pot)
    sec = ctx.section("simulation")
    mode = sec.get("mode", "first_passage")
    tid = int(sec.get("trajectory_id", 0))
    if mode == "stationary":
        dt = _dt(ctx, sec, units, _default_dt(units))
        stride = int(sec.get("record_stride", 10))
        x_init = float(sec.get("x_init", _default_window(pot, state)[1]))
        run = simulate_stationary(fld, x_init, int(sec.get("n_steps", 10**7)), dt, ctx.seed, stride, tid)
        v = pot(run.positions)
        barrier = run.positions[np.abs(run.positions) < 0.5 * pot.d] if isinstance(pot, SquareDoubleWell) else None
        payload = {"mode": mode, "n_steps": run.n_steps, "dt": dt, "energy_mean": run.energy.mean,
                   "E0": state.energy, "energy_rel_error": run.energy.mean / state.energy - 1.0,
                   "min_energy_minus_potential": float(np.min(run.energy.energies - v)),
                   "barrier_samples": 0 if barrier is None else int(barrier.size),
                   "ks_distance": ks_distance(run.positions, state), "clamped_steps": run.clamped_steps}
        ctx.out.json("simulate.json", "stationary run summary", "simulate", payload)
        ctx.out.rows("trajectory.csv", "sampled path", "trajectory", _path_rows(fld, run.positions, stride, dt))
        return f"energy_mean={run.energy.mean:.6g} E0={state.energy:.6g} ks={payload['ks_distance']:.4g}"
    if mode != "first_passage":
        raise ConfigError(f"unknown simulation.mode {mode!r}")
    a0, s0, e0 = _default_window(pot, state)
    tau_q = mfpt_quadrature(state, a0, float(sec.get("x_init", s0)), float(sec.get("absorb_at", e0)))
    stride = int(sec.get("record_stride", 100))
    cfg = _trajectory_config(ctx, sec, pot, units, state, _default_dt(units), tau_q, stride)
    fp = simulate_first_passage(cfg, fld, tid, record_energy=stride > 0)
    payload = {"mode": mode, "config": cfg.to_dict(), "trajectory_id": tid, "tau": fp.tau, "steps": fp.steps,
               "clamped_steps": fp.clamped_steps, "timed_out": fp.timed_out, "tau_quadrature": tau_q}
    if fp.energy is not None:
        payload["energy_sample_mean"] = float(np.mean(fp.energy.energies))
    ctx.out.json("simulate.json", "first-passage run summary", "simulate", payload)
    if fp.path is not None:
        ctx.out.rows("trajectory.csv", "sampled path", "trajectory", _path_rows(fld, fp.path, stride, cfg.dt))
    return f"tau={fp.tau:.8g} steps={fp.steps} timed_out={fp.timed_out}"


def cmd_ensemble(ctx: Context) -> str:
    pot, units = _potential(ctx, _DEFAULT_SQUARE)
    state = _state(pot, units, 0, ctx.grid_points)
    fld = OsmoticField.from_state(state, pot)
    sec = ctx.section("ensemble")
    n = int(sec.get("n", 1000))
    if n < 0:
        raise ConfigError("ensemble.n must be non-negative")
    a0, s0, e0 = _default_window(pot, state)
    x_init, absorb = float(sec.get("x_init", s0)), float(sec.get("absorb_at", e0))
    reflect = sec.get("reflect_at")
    tau_q = mfpt_quadrature(state, a0 if reflect is None else float(reflect), x_init, absorb)
    cfg = _trajectory_config(ctx, sec, pot, units, state, _default_dt(units), tau_q)
    if n == 0:
        return f"dry run: config valid (dt={cfg.dt:g}, tau_quadrature={tau_q:.6g})"
    run = run_ensemble(fld, cfg, n, workers=ctx.workers, chunk_size=int(sec.get("chunk_size", 256)))
    ens = run.ensemble
    decay = 1.0 / survival_decay_rate(state, a0 if reflect is None else float(reflect), absorb)
    payload = {"n_requested": n, "n": ens.n, "timed_out": ens.timed_out, "mean": ens.mean, "stderr": ens.stderr,
               "clamped_steps": ens.clamped_steps, "tau_quadrature": tau_q, "decay_time": decay,
               "config": cfg.to_dict(), "ensemble_digest": ens.config_digest}
    try:
        payload["tail"] = fit_exponential_tail(ens, sec.get("tail_threshold")).to_dict(ens)
    except SqtError as exc:
        payload["tail"] = {"error": str(exc)}
    bins = int(sec.get("bins", 100))
    ctx.out.custom("records.csv", "per-trajectory records", "records", run.write_records)
    ctx.out.custom("histogram.csv", "first-passage histogram", "histogram",
                   lambda p, h: ens.write_histogram(p, bins, header=h))
    ctx.out.json("ensemble.json", "ensemble summary", "ensemble", payload)
    return f"n={ens.n} mean={ens.mean:.6g}+-{ens.stderr:.2g} quadrature={tau_q:.6g}"


def read_records(path) -> np.ndarray:
    """First-passage times (timed-out rows dropped) from a records CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if not rows or "tau" not in rows[0] or "timed_out" not in rows[0]:
        raise ConfigError(f"{path} is not a records file (need columns tau and timed_out)")
    return np.array([float(r["tau"]) for r in rows if int(r["timed_out"]) == 0])


def cmd_tail_fit(ctx: Context) -> str:
    sec = ctx.section("tail")
    if "input" not in sec:
        raise ConfigError("tail-fit needs tail.input (a records.csv written by the ensemble subcommand)")
    src = Path(sec["input"])
    if not src.is_file():
        raise ConfigError(f"records file {str(src)!r} not found")
    taus = read_records(src)
    fit = fit_exponential_tail(taus, sec.get("threshold"), int(sec.get("min_samples", 100)), int(sec.get("bins", 50)))
    payload = fit.to_dict()
    payload.update(n=int(taus.size), mean=float(np.mean(taus)), input=src.name)
    ctx.out.json("tail.json", "exponential tail fit", "tail", payload)
    return f"tau_l={fit.tau_l:.6g} threshold={fit.threshold:.6g} n_exceed={fit.n_exceed}"


def cmd_dsw_scan(ctx: Context) -> str:
    sec = ctx.section("scan")
    kind = sec.get("kind", "k0")
    b = float(sec.get("b", 6.0))
    if kind == "k0":
        rows = dsw_k0_scan(b, sec.get("d_values", [2.0, 3.0, 4.0]), sec.get("k0_values", _parse_list("0.5:4:36")))
    elif kind == "d":
        rows = dsw_d_scan(b, sec.get("V0_values", [2.0, 3.0, 3.5]), sec.get("d_values", _parse_list("0.1:5.8:58")))
    else:
        raise ConfigError(f"unknown scan.kind {kind!r} (expected k0 or d)")
    ctx.out.rows(f"dsw_scan_{kind}.csv", f"square-well tau_bar scan over {kind}", "dsw-scan", rows)
    finite = [r["tau_bar"] for r in rows if math.isfinite(r["tau_bar"])]
    return f"rows={len(rows)} tau_bar_range=[{min(finite):.6g}, {max(finite):.6g}]"


def cmd_wkb(ctx: Context) -> str:
    pot, units = _potential(ctx, _DEFAULT_RM)
    if not isinstance(pot, RosenMorseDouble):
        raise ConfigError("wkb needs a rosen_morse potential")
    grid = default_grid(pot, units, ctx.grid_points or 8001)
    s0 = numerov_bound_state(pot, units, 0, grid)
    e1 = numerov_bound_state(pot, units, 1, grid).energy
    pair = spectrum_pair(s0.energy, e1, units)
    E = float(ctx.section("wkb").get("energy", s0.energy))
    q = wkb_quantities(pot, E, units)
    tau = mfpt_quadrature(s0, None, -q.turning.b_inner, q.turning.b_inner) if E == s0.energy else math.nan
    payload = q.to_dict()
    payload.update(potential=pot.to_dict(), E0=s0.energy, period_exact=pair.period, delta_e_exact=pair.delta_e,
                   tau_bar_quadrature=tau, period_ratio=q.t_big_wkb / pair.period,
                   tau_ratio=q.tau_wkb / tau if math.isfinite(tau) else math.nan)
    ctx.out.json("wkb.json", "WKB quantities", "wkb", payload)
    return f"phi={q.phi:.6g} t_cl={q.t_cl:.6g} tau_wkb={q.tau_wkb:.6g} T_wkb/T={payload['period_ratio']:.4g}"


def cmd_ratio_scan(ctx: Context) -> str:
    sec = ctx.section("ratio")
    A, d, k = float(sec.get("A", 398.0)), float(sec.get("d", 0.17)), float(sec.get("k", 2.22))
    units = amm.ammonia_units(float(sec.get("m_H", amm.M_HYDROGEN)), float(sec.get("m_N", amm.M_NITROGEN)))
    Bs = np.linspace(float(sec.get("B_min", 680.0)), float(sec.get("B_max", 2810.0)), int(sec.get("B_count", 30)))
    gp = ctx.grid_points or 8001
    rows = amm.ratio_scan(Bs, A, d, k, units, gp)
    ctx.out.rows("ratio_scan.csv", "tau_QM/tau_bar against barrier height", "ratio-scan", rows)
    stop_rows, points = [], []
    for mev in sec.get("points_meV", [39.5, 98.0, 286.5]):
        B = amm.locate_barrier(mev, A, d, k)
        pt = amm.doublet_point(RosenMorseDouble(A, B, d, k), units, gp)
        scan = amm.stopping_rule_scan(pt, int(sec.get("stop_points", 41)))
        stop_rows += [{"point_meV": mev, "B": B, **r} for r in scan]
        points.append({**pt.row(), "point_meV": mev, "stopping_rule_spread": amm.scan_spread(scan)})
    ctx.out.rows("stopping_rule.csv", "tau_QM/tau_bar against the stopping point", "stopping-rule", stop_rows)
    ctx.out.json("ratio_points.json", "marked barrier heights", "ratio-points", {"points": points})
    return f"rows={len(rows)} ratio_last={rows[-1]['ratio']:.6g} pi/2={math.pi / 2:.6g}"


def ammonia_config(ctx: Context) -> amm.AmmoniaConfig:
    sec, ens = ctx.section("ammonia"), ctx.section("ensemble")
    if "dt" in ens:
        raise UnitError("the ammonia pipeline takes ensemble.dt_ps (ps), not ensemble.dt")
    extra = set(ens) - {"n", "dt_ps", "tail_threshold"}
    if extra:
        raise ConfigError(f"key {sorted(extra)[0]!r} in section [ensemble] is not used by the ammonia pipeline")
    base = amm.AmmoniaConfig()
    return amm.AmmoniaConfig(
        targets=amm.SpectroscopicTargets(float(sec.get("delta_e0", base.targets.delta_e0)),
                                         float(sec.get("delta_e1", base.targets.delta_e1)),
                                         float(sec.get("pair_gap", base.targets.pair_gap))),
        d_angstrom=float(sec.get("d_angstrom", base.d_angstrom)), k=float(sec.get("k", base.k)),
        m_H=float(sec.get("m_H", base.m_H)), m_N=float(sec.get("m_N", base.m_N)),
        fit_mode=sec.get("fit_mode", base.fit_mode), A_anchor=float(sec.get("A_anchor", base.A_anchor)),
        A_bounds=(float(sec.get("A_min", base.A_bounds[0])), float(sec.get("A_max", base.A_bounds[1]))),
        B_bounds=(float(sec.get("B_min", base.B_bounds[0])), float(sec.get("B_max", base.B_bounds[1]))),
        A=sec.get("A"), B=sec.get("B"), grid_points=ctx.grid_points or base.grid_points,
        ensemble_n=int(ens.get("n", 0)), ensemble_dt_ps=float(ens.get("dt_ps", base.ensemble_dt_ps)),
        seed=ctx.seed, workers=ctx.workers, tail_threshold=ens.get("tail_threshold"))


def cmd_ammonia(ctx: Context) -> str:
    if ctx.section("potential"):
        raise ConfigError("the ammonia pipeline builds its own potential; remove section [potential]")
    rep = amm.run_ammonia_pipeline(ammonia_config(ctx))
    ctx.out.json("ammonia_report.json", "ammonia report", "ammonia", rep.to_dict())
    rows = [{"doublet": i, "lower": p.e0, "upper": p.e1, "splitting": p.delta_e, "period_ps": p.period}
            for i, p in enumerate(rep.levels)]
    ctx.out.rows("levels.csv", "doublet levels", "levels", rows)
    if rep.ensemble_run is not None:
        ctx.out.custom("records.csv", "per-trajectory records", "records", rep.ensemble_run.write_records)
        ctx.out.custom("histogram.csv", "first-passage histogram", "histogram",
                       lambda p, h: rep.ensemble_run.ensemble.write_histogram(p, header=h))
    return f"tau_bar={rep.tau_bar:.6g} ps nu_sq={rep.nu_sq:.6g} GHz nu_qm={rep.nu_qm:.6g} GHz nu_exp={rep.nu_exp} GHz"


COMMANDS: dict[str, Callable[[Context], str]] = {
    "solve": cmd_solve, "mfpt": cmd_mfpt, "simulate": cmd_simulate, "ensemble": cmd_ensemble,
    "tail-fit": cmd_tail_fit, "dsw-scan": cmd_dsw_scan, "wkb": cmd_wkb, "ratio-scan": cmd_ratio_scan,
    "ammonia": cmd_ammonia,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqtunnel", description="Stochastic-quantization tunneling times.")
    sub = p.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=f"run the {name} stage")
        s.add_argument("config", nargs="?", help="INI configuration file")
        s.add_argument("--seed", type=int, help="64-bit RNG seed (overrides run.seed)")
        s.add_argument("--workers", type=int, help="worker processes (overrides run.workers)")
        s.add_argument("--grid-points", type=int, help="grid size for eigenstates (overrides run.grid_points)")
        s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./sqtunnel_out)")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration entry (repeatable)")
    return p


def run(argv: Optional[list[str]] = None) -> tuple[int, Optional[RunManifest]]:
    """Execute one subcommand; returns the exit status and the manifest (None on failure)."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        run_sec = cfg.setdefault("run", {})
        for key, val in (("seed", args.seed), ("workers", args.workers), ("grid_points", args.grid_points)):
            if val is not None:
                run_sec[key] = val
        seed = int(run_sec.get("seed", DEFAULT_SEED))
        if not 0 <= seed < 2**64:
            raise ConfigError("run.seed must be a 64-bit unsigned integer")
        workers = run_sec.get("workers")
        # workers never changes results, so it stays out of the digest
        hashed = {s: dict(v) for s, v in cfg.items()}
        hashed["run"] = {k: v for k, v in run_sec.items() if k != "workers"}
        hashed["run"]["seed"] = seed
        manifest = RunManifest(args.subcommand, digest({"subcommand": args.subcommand, "config": hashed}), seed,
                               _version())
        out_root = Path(args.out or os.environ.get(OUT_ENV) or "sqtunnel_out")
        out = OutputDir(out_root, manifest)
        ctx = Context(args.subcommand, cfg, seed, workers, run_sec.get("grid_points"), out)
        summary = COMMANDS[args.subcommand](ctx)
        record = manifest.to_dict()
        record["created_utc"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        out._place("manifest.json", "manifest", lambda p: p.write_text(to_json(record) + "\n"), listed=False)
        print(f"{args.subcommand}: {summary} [{len(manifest.outputs)} outputs in {out_root}]")
        return 0, manifest
    except Exception as exc:  # reported as JSON
        code = 2 if isinstance(exc, ConfigError) else 3 if isinstance(exc, SqtError) else 1
        err = {"error": type(exc).__name__, "message": str(exc), "subcommand": args.subcommand, "exit_code": code}
        if isinstance(exc, StageError):
            err["stage"] = exc.stage
        print(json.dumps(err), file=sys.stderr)
        return code, None


def main(argv: Optional[list[str]] = None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())
