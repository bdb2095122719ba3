"""Run configuration, CSV emission, order estimation and method comparison."""
from __future__ import annotations

import csv
import dataclasses
import functools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continuous import Trajectory, reference_trajectory
from .errors import ConfigurationError, StepFailure
from .schemes import Scheme, projectors
from .steppers import METHODS, SolverConfig, integrate
from .systems import MechanicalSystem, builtin_system

CANONICAL_Q0 = (1.0, 1.0, 0.0)
CANONICAL_V0 = (1.0, 0.5, 1.0)


@dataclass
class RunConfig:
    system: str = "particle"
    method: str = "gfni"
    alpha: float = 0.5
    symmetric: bool = False
    h: float = 0.1
    steps: int = 100
    q0: tuple = CANONICAL_Q0
    v0: tuple = CANONICAL_V0
    project_v0: bool = False
    tol: float = 1e-12
    max_iter: int = 50
    out: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        for name in ("alpha", "h", "tol"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ConfigurationError(f"{name} must be a finite number, got {value!r}")
        for name in ("steps", "max_iter", "seed"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"{name} must be an integer, got {value!r}")
        if self.steps < 0:
            raise ConfigurationError("steps must be non-negative")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be positive")
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        self.q0 = _vector(self.q0, "q0")
        self.v0 = _vector(self.v0, "v0")
        Scheme(self.alpha, self.h, self.symmetric)

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_json(cls, path, overrides: dict | None = None) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(data)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def build_system(self) -> MechanicalSystem:
        system = builtin_system(self.system)
        if len(self.q0) != system.n or len(self.v0) != system.n:
            raise ConfigurationError(f"q0 and v0 must have length {system.n} for system {self.system!r}")
        return system

    def scheme(self) -> Scheme:
        return Scheme(self.alpha, self.h, self.symmetric)

    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, max_iter=self.max_iter)


def _vector(value, name):
    if isinstance(value, str):
        value = [s for s in value.split(",") if s.strip()]
    try:
        out = tuple(float(x) for x in value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name} must be a list of numbers, got {value!r}") from exc
    if not out or not all(math.isfinite(x) for x in out):
        raise ConfigurationError(f"{name} must be a non-empty list of finite numbers")
    return out


# ---------------------------------------------------------------------------
# CSV


def csv_header(n: int, m: int) -> list[str]:
    return (
        ["step", "t"]
        + [f"q{i}" for i in range(n)]
        + [f"v{i}" for i in range(n)]
        + ["E"]
        + [f"psi{a}" for a in range(m)]
        + [f"phid{a}" for a in range(m)]
        + ["newton_iters", "newton_residual", "nondeg_det"]
    )


def _fmt(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else f"{x:.17g}"


def _fmt_iters(x) -> str:
    return "" if math.isnan(x) else str(int(x))


def write_csv(traj: Trajectory, path) -> None:
    """One row per grid point.  Non-applicable fields are left empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(traj.system.n, traj.system.m))
        for k in range(len(traj.q)):
            row = [str(k), _fmt(k * traj.h)]
            row += [_fmt(x) for x in traj.q[k]] + [_fmt(x) for x in traj.v[k]]
            row.append(_fmt(traj.energy[k]))
            row += [_fmt(x) for x in traj.psi[k]] + [_fmt(x) for x in traj.phid[k]]
            row += [_fmt_iters(traj.newton_iters[k]), _fmt(traj.newton_residual[k]), _fmt(traj.nondeg_det[k])]
            writer.writerow(row)


def read_csv(path, system: MechanicalSystem, method: str = "csv") -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[math.nan if s == "" else float(s) for s in row] for row in reader]
    n, m = system.n, system.m
    if header != csv_header(n, m):
        raise ConfigurationError(f"{path}: header does not match system {system.name!r}")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    h = data[1, 1] if len(data) > 1 else math.nan
    col = 2
    q, v = data[:, col:col + n], data[:, col + n:col + 2 * n]
    col += 2 * n
    e = data[:, col]
    psi, phid = data[:, col + 1:col + 1 + m], data[:, col + 1 + m:col + 1 + 2 * m]
    iters, resid, dets = data[:, -3], data[:, -2], data[:, -1]
    return Trajectory(system, method, h, q, v, energy=e, psi=psi, phid=phid,
                      newton_iters=iters, newton_residual=resid, nondeg_det=dets)


# ---------------------------------------------------------------------------
# operations


def simulate(config: RunConfig) -> Trajectory:
    system = config.build_system()
    return integrate(system, config.method, config.scheme(), np.array(config.q0), np.array(config.v0),
                     config.steps, config.solver(), project_v0=config.project_v0)


def run(config: RunConfig) -> Trajectory:
    """Integrate and, if ``config.out`` is set, write the CSV.

    On a step failure the partial trajectory is written before the
    :class:`StepFailure` propagates.
    """
    try:
        traj = simulate(config)
    except StepFailure as exc:
        if config.out:
            write_csv(exc.trajectory, config.out)
        raise
    if config.out:
        write_csv(traj, config.out)
    return traj


@dataclass
class OrderReport:
    h: np.ndarray
    errors: np.ndarray
    slope: float
    ratios: np.ndarray = field(default=None)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if self.ratios is None:
            self.ratios = self.errors[:-1] / self.errors[1:]


def fit_order(h_list, errors) -> OrderReport:
    """Least-squares slope of ``log error`` against ``log h``."""
    h = np.asarray(h_list, dtype=float)
    err = np.asarray(errors, dtype=float)
    if len(h) < 3 or len(h) != len(err):
        raise ConfigurationError("order estimation needs at least three (h, error) pairs")
    order = np.argsort(-h)
    h, err = h[order], err[order]
    if np.any(np.diff(h) >= 0):
        raise ConfigurationError("step sizes must be distinct")
    if np.any(~(err > 0)):
        raise ConfigurationError("errors must be positive to fit an order")
    slope = np.polyfit(np.log(h), np.log(err), 1)[0]
    return OrderReport(h, err, float(slope))


def order_estimate(config: RunConfig, h_list, h_ref: float | None = None) -> OrderReport:
    """Final-time sup-norm error in ``q`` against a fine RK4 reference.

    The final time ``T = config.steps * config.h`` is held fixed; ``h_ref``
    defaults to ``min(h_list) / 200``.
    """
    h_list = sorted((float(h) for h in h_list), reverse=True)
    if len(h_list) < 3:
        raise ConfigurationError("order estimation needs at least three step sizes")
    T = config.steps * config.h
    if not T > 0:
        raise ConfigurationError("order estimation needs steps * h > 0")
    system = config.build_system()
    q0, v0 = np.array(config.q0), np.array(config.v0)
    if config.project_v0 and system.m:
        v0 = projectors(system, q0).Pvec @ v0
    h_ref = min(h_list) / 200 if h_ref is None else h_ref
    q_ref = _reference_endpoint(config.system, tuple(q0), tuple(v0), T, h_ref)
    errors = []
    for h in h_list:
        steps = int(round(T / h))
        if abs(steps * h - T) > 1e-9 * T:
            raise ConfigurationError(f"h = {h} does not divide T = {T}")
        traj = integrate(system, config.method, Scheme(config.alpha, h, config.symmetric), q0, v0, steps,
                         config.solver())
        errors.append(float(np.max(np.abs(traj.q[-1] - q_ref))))
    return fit_order(h_list, errors)


@functools.lru_cache(maxsize=16)
def _reference_endpoint(system_name, q0, v0, T, h_ref):
    # keyed by the registered name so that repeated sweeps share one reference
    ref = reference_trajectory(builtin_system(system_name), np.array(q0), np.array(v0), T, T, h_ref=h_ref)
    return ref.q[-1]


COMPARE_COLUMNS = ("method", "max_energy_error", "drift_sign", "max_psi", "max_phid", "wall_time")


def _drift_sign(traj: Trajectory) -> int:
    half = len(traj.energy) // 2
    e = traj.energy[half:]
    if len(e) < 2:
        return 0
    return int(np.sign(np.polyfit(traj.times[half:], e, 1)[0]))


def _max_abs(a) -> float:
    a = np.abs(np.asarray(a, dtype=float))
    return math.nan if a.size == 0 or np.all(np.isnan(a)) else float(np.nanmax(a))


def compare(config: RunConfig, methods=METHODS, out=None) -> list[dict]:
    """Run every method with the same scheme and initial data.

    Returns one summary row per method; writes them as CSV when ``out`` is
    given.
    """
    rows = []
    for method in methods:
        start = time.perf_counter()
        traj = simulate(config.replace(method=method))
        wall = time.perf_counter() - start
        rows.append({
            "method": method,
            "max_energy_error": float(np.max(traj.energy_error())),
            "drift_sign": _drift_sign(traj),
            "max_psi": _max_abs(traj.psi),
            "max_phid": _max_abs(traj.phid),
            "wall_time": wall,
        })
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in row.items()})
    return rows
