"""Continuous-time nonholonomic dynamics and the RK4 baseline.

Sign convention: the constraint force is ``Lambda = lambda_a mu^a`` and the
equations of motion read ``g a = -grad V - Lambda``.  For the nonholonomic
particle this gives ``Lambda = (2xy - x'y')/(1 + y^2) (dz - y dx)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, InconsistentInitialDataError
from .systems import (
    MechanicalSystem,
    constraint_gram,
    constraint_value,
    energy,
    legendre,
    momentum_constraint,
)

CONSTRAINT_TOL = 1e-9


def _solve_gram(system: MechanicalSystem, q: np.ndarray, rhs: np.ndarray, mu=None) -> np.ndarray:
    if mu is None:
        gram = constraint_gram(system, q)
    else:
        gram = mu @ system.metric_inv @ np.swapaxes(mu, -1, -2)
    if system.m == 1:
        c = gram[..., 0, 0]
        if not np.all(c > 0):
            raise CompatibilityError("constraint Gram matrix is singular")
        return rhs / c[..., None]
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise CompatibilityError("constraint Gram matrix is singular") from None
    y = np.linalg.solve(chol, rhs[..., None])
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]


def _multipliers(system, q, v):
    mu = system.constraint_matrix(q)
    dmu = system.constraint_jacobian(q)
    quad = np.einsum("...aij,...i,...j->...a", dmu, v, v)
    drift = np.einsum("...ai,...i->...a", mu, system.grad_potential(q) @ system.metric_inv)
    return _solve_gram(system, q, quad - drift, mu), mu


def multipliers(system: MechanicalSystem, q, v) -> np.ndarray:
    """Lagrange multipliers ``lambda`` with ``Lambda = lambda_a mu^a``.

    Fixed by requiring ``d/dt (mu v) = mu a + (v . dmu/dq) v = 0`` for
    ``a = g^-1 (-grad V - mu^T lambda)``.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if system.m == 0:
        return np.zeros(q.shape[:-1] + (0,))
    return _multipliers(system, q, v)[0]


def force_oneform(system: MechanicalSystem, q, v) -> np.ndarray:
    """Components of the constraint force covector ``Lambda(q, v)``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if system.m == 0:
        return np.zeros(np.broadcast_shapes(q.shape, v.shape))
    lam, mu = _multipliers(system, q, v)
    return (lam[..., None, :] @ mu)[..., 0, :]


def nonholonomic_field(system: MechanicalSystem, q, v) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side ``(q', v')`` of the constrained equations of motion."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    force = system.grad_potential(q) + force_oneform(system, q, v)
    return v, -force @ system.metric_inv


def rk4_step(system: MechanicalSystem, q, v, h: float) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    k1q, k1v = nonholonomic_field(system, q, v)
    k2q, k2v = nonholonomic_field(system, q + 0.5 * h * k1q, v + 0.5 * h * k1v)
    k3q, k3v = nonholonomic_field(system, q + 0.5 * h * k2q, v + 0.5 * h * k2v)
    k4q, k4v = nonholonomic_field(system, q + h * k3q, v + h * k3v)
    q_next = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    v_next = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return q_next, v_next


def rk4_flow(system: MechanicalSystem, q0, v0, h: float, substeps: int):
    """Integrate with ``substeps`` RK4 steps of size ``h / substeps``.

    Returns the full grid ``(q, v)`` with shapes ``(substeps + 1, ..., n)``;
    ``q0``/``v0`` may carry batch axes.
    """
    dt = h / substeps
    q = np.asarray(q0, dtype=float)
    v = np.asarray(v0, dtype=float)
    shape = np.broadcast_shapes(q.shape, v.shape)
    q, v = np.broadcast_to(q, shape), np.broadcast_to(v, shape)
    qs = np.empty((substeps + 1,) + shape)
    vs = np.empty((substeps + 1,) + shape)
    qs[0], vs[0] = q, v
    for k in range(substeps):
        q, v = rk4_step(system, q, v, dt)
        qs[k + 1], vs[k + 1] = q, v
    return qs, vs


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """States on an equidistant grid plus per-step diagnostics.

    Row ``k`` describes the state at ``t_k = k h``.  ``phid[k]`` is the
    discrete constraint of the pair ``(q_{k-1}, q_k)``; Newton columns
    describe the solve that produced ``q_k``.  Fields that do not apply to a
    method (or to row 0) are NaN.
    """

    system: MechanicalSystem
    method: str
    h: float
    q: np.ndarray
    v: np.ndarray
    energy: np.ndarray = field(default=None)
    psi: np.ndarray = field(default=None)
    phid: np.ndarray = field(default=None)
    newton_iters: np.ndarray = field(default=None)
    newton_residual: np.ndarray = field(default=None)
    nondeg_det: np.ndarray = field(default=None)

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        rows, m = len(self.q), self.system.m
        if self.v.shape != self.q.shape:
            raise ValueError("q and v must have the same shape")
        if self.energy is None:
            self.energy = energy(self.system, self.q, self.v)
        if self.psi is None:
            self.psi = momentum_constraint(self.system, self.q, legendre(self.system, self.v))
        nan_m = np.full((rows, m), np.nan)
        nan_1 = np.full(rows, np.nan)
        self.phid = nan_m if self.phid is None else np.asarray(self.phid, dtype=float).reshape(rows, m)
        self.newton_iters = nan_1.copy() if self.newton_iters is None else np.asarray(self.newton_iters, dtype=float)
        self.newton_residual = nan_1.copy() if self.newton_residual is None else np.asarray(self.newton_residual, dtype=float)
        self.nondeg_det = nan_1.copy() if self.nondeg_det is None else np.asarray(self.nondeg_det, dtype=float)

    @property
    def steps(self) -> int:
        return len(self.q) - 1

    @property
    def times(self) -> np.ndarray:
        return self.h * np.arange(len(self.q))

    @property
    def p(self) -> np.ndarray:
        return legendre(self.system, self.v)

    def energy_error(self) -> np.ndarray:
        return np.abs(self.energy - self.energy[0])

    def truncated(self, rows: int) -> "Trajectory":
        return Trajectory(
            self.system, self.method, self.h, self.q[:rows], self.v[:rows],
            energy=self.energy[:rows], psi=self.psi[:rows], phid=self.phid[:rows],
            newton_iters=self.newton_iters[:rows], newton_residual=self.newton_residual[:rows],
            nondeg_det=self.nondeg_det[:rows],
        )


def check_initial_data(system: MechanicalSystem, q0, v0, tol: float = CONSTRAINT_TOL) -> None:
    residual = constraint_value(system, q0, v0)
    if residual.size and np.max(np.abs(residual)) > tol:
        raise InconsistentInitialDataError(
            f"initial velocity violates the constraint: |mu(q0) v0| = {np.max(np.abs(residual)):.3e}"
        )


def rk4_integrate(system: MechanicalSystem, q0, v0, h: float, steps: int) -> Trajectory:
    q = np.empty((steps + 1, system.n))
    v = np.empty((steps + 1, system.n))
    q[0] = np.asarray(q0, dtype=float)
    v[0] = np.asarray(v0, dtype=float)
    for k in range(steps):
        q[k + 1], v[k + 1] = rk4_step(system, q[k], v[k], h)
    return Trajectory(system, "rk4", h, q, v)


def reference_trajectory(
    system: MechanicalSystem,
    q0,
    v0,
    T: float,
    h: float,
    h_ref: float | None = None,
    richardson: bool = False,
) -> Trajectory:
    """Fine-step RK4 solution sampled on the grid ``t_k = k h``.

    ``h_ref`` defaults to ``h / 200`` and is rounded so that it divides
    ``h``.  With ``richardson=True`` the run is repeated at ``h_ref / 2`` and
    a warning is issued if the two differ by more than ``1e-10``.
    """
    check_initial_data(system, q0, v0)
    steps = int(round(T / h))
    sub = 200 if h_ref is None else max(1, int(round(h / h_ref)))
    traj = _sampled_rk4(system, q0, v0, h, steps, sub)
    if richardson:
        finer = _sampled_rk4(system, q0, v0, h, steps, 2 * sub)
        diff = float(np.max(np.abs(finer.q - traj.q)))
        if diff > 1e-10:
            warnings.warn(f"reference trajectory not converged: h_ref vs h_ref/2 differ by {diff:.2e}")
    return traj


def _sampled_rk4(system, q0, v0, h, steps, sub):
    dt = h / sub
    q = np.asarray(q0, dtype=float)
    v = np.asarray(v0, dtype=float)
    qs = np.empty((steps + 1, system.n))
    vs = np.empty((steps + 1, system.n))
    qs[0], vs[0] = q, v
    for k in range(steps):
        for _ in range(sub):
            q, v = rk4_step(system, q, v, dt)
        qs[k + 1], vs[k + 1] = q, v
    return Trajectory(system, "reference", h, qs, vs)
