"""Implicit two-point steppers and trajectory integration.

Every implicit method advances a pair ``(q_prev, q_cur)`` to ``q_next``.
The generating-function integrator and its constraint-preserving variant
both reduce to matching the momentum at ``q_cur``:

    -D1 S(q_cur, x) + alpha0(q_cur, x) = p_cur

with ``p_cur = D2 S(q_prev, q_cur) - alpha1(q_prev, q_cur)`` for ``gfni`` and
its covector projection onto the constraint distribution for
``preserving``.  The discrete Lagrange-D'Alembert method instead adds a
multiplier ``nu`` and a midpoint discrete constraint.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .continuous import Trajectory, check_initial_data, rk4_integrate
from .errors import (
    CompatibilityError,
    ConfigurationError,
    InconsistentInitialDataError,
    NonConvergenceError,
    StepFailure,
)
from .schemes import (
    Scheme,
    discrete_legendre,
    force_weights,
    projectors,
    s_alpha_grads,
)
from .systems import (
    MechanicalSystem,
    constraint_value,
    energy,
    inverse_legendre,
    legendre,
    momentum_constraint,
)

METHODS = ("rk4", "dla", "gfni", "preserving")
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-12
    max_iter: int = 50
    fd_step: float | None = None
    predictor: str = "linear-extrapolation"
    max_halvings: int = 8

    def __post_init__(self):
        if not (self.tol > 0):
            raise ConfigurationError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if self.predictor != "linear-extrapolation":
            raise ConfigurationError(f"unknown predictor {self.predictor!r}")

    def steps_for(self, x: np.ndarray) -> np.ndarray:
        if self.fd_step is not None:
            return np.full(x.shape, self.fd_step) * np.maximum(1.0, np.abs(x))
        return np.sqrt(_EPS) * np.maximum(1.0, np.abs(x))


class NewtonResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float
    jacobian: np.ndarray
    value: np.ndarray


@dataclass
class StepRecord:
    q_next: np.ndarray
    p_next: np.ndarray
    newton_iters: int
    newton_residual: float
    nondegeneracy_det: float
    discrete_constraint_residual: np.ndarray
    multiplier: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Newton engine


def _eval_with_jacobian(residual, x, cfg, vectorized):
    """Residual at ``x`` and its forward-difference Jacobian."""
    steps = cfg.steps_for(x)
    n = x.size
    if vectorized:
        pts = np.repeat(x[None, :], n + 1, axis=0)
        pts[np.arange(1, n + 1), np.arange(n)] += steps
        vals = np.asarray(residual(pts), dtype=float)
        r = vals[0]
        return r, (vals[1:] - r).T / steps
    r = np.asarray(residual(x), dtype=float)
    jac = np.empty((r.size, n))
    for j in range(n):
        xp = x.copy()
        xp[j] += steps[j]
        jac[:, j] = (np.asarray(residual(xp), dtype=float) - r) / steps[j]
    return r, jac


def _inf_norm(r):
    return float(np.max(np.abs(r))) if r.size else 0.0


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    x0,
    cfg: SolverConfig | None = None,
    vectorized: bool = False,
) -> NewtonResult:
    """Solve ``residual(x) = 0`` by Newton's method.

    The Jacobian is built from forward differences.  A step that does not
    decrease the residual norm is halved up to ``cfg.max_halvings`` times.
    With ``vectorized=True`` the residual must accept a ``(k, n)`` batch; the
    residual and all Jacobian columns are then obtained in one call.

    Raises :class:`NonConvergenceError` carrying the best iterate when the
    iteration cap is hit or the line search stalls.
    """
    cfg = cfg or SolverConfig()
    x = np.array(x0, dtype=float).ravel()
    r, jac = _eval_with_jacobian(residual, x, cfg, vectorized)
    norm = _inf_norm(r)
    for it in range(cfg.max_iter + 1):
        if not np.isfinite(norm):
            raise NonConvergenceError("residual is not finite", x, norm, it)
        if norm <= cfg.tol:
            return NewtonResult(x, it, norm, jac, r)
        if it == cfg.max_iter:
            break
        try:
            dx = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            raise NonConvergenceError("singular Jacobian in Newton iteration", x, norm, it) from None
        t = 1.0
        for _ in range(cfg.max_halvings + 1):
            x_try = x + t * dx
            r_try, jac_try = _eval_with_jacobian(residual, x_try, cfg, vectorized)
            norm_try = _inf_norm(r_try)
            if norm_try < norm or norm_try <= cfg.tol:
                break
            t *= 0.5
        else:
            raise NonConvergenceError(f"line search stalled at residual {norm:.3e}", x, norm, it)
        x, r, jac, norm = x_try, r_try, jac_try, norm_try
    raise NonConvergenceError(
        f"Newton did not converge in {cfg.max_iter} iterations (residual {norm:.3e})",
        x, norm, cfg.max_iter,
    )


# ---------------------------------------------------------------------------
# shared pieces


def _tolerance(cfg: SolverConfig, p: np.ndarray) -> SolverConfig:
    # residuals are momentum-sized: scale tol by the known momentum
    scale = max(1.0, float(np.max(np.abs(p))) if p.size else 1.0)
    if scale == 1.0:
        return cfg
    return SolverConfig(cfg.tol * scale, cfg.max_iter, cfg.fd_step, cfg.predictor, cfg.max_halvings)


def _check_det(det: float, system: MechanicalSystem, scheme: Scheme) -> None:
    scale = scheme.h ** (-system.n) * abs(np.linalg.det(system.metric))
    if abs(det) < 1e-10 * scale:
        warnings.warn(f"near-degenerate step: nondegeneracy determinant {det:.3e}", RuntimeWarning)


def _solve_from_momentum(system, scheme, q_cur, p_cur, x0, cfg):
    """Find ``x`` with ``-D1 S(q_cur, x) + alpha0(q_cur, x) = p_cur``."""

    def residual(x):
        d1, _ = s_alpha_grads(system, scheme, q_cur, x)
        alpha0, _ = force_weights(system, scheme, q_cur, x)
        return p_cur + d1 - alpha0

    cfg = _tolerance(cfg, p_cur)
    try:
        res = newton_solve(residual, x0, cfg, vectorized=True)
    except np.linalg.LinAlgError as exc:
        raise NonConvergenceError(str(exc)) from exc
    det = float(np.linalg.det(res.jacobian))
    _check_det(det, system, scheme)
    return res, det


def nondegeneracy_matrix(system: MechanicalSystem, scheme: Scheme, q0, q1, forces: bool = True, step: float = 1e-5):
    """``d^2 S / dq0 dq1 - d alpha0 / dq1`` by central differences in ``q1``."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    n = system.n
    dx = step * np.maximum(1.0, np.abs(q1))
    pts = np.concatenate([q1 + np.diag(dx), q1 - np.diag(dx)])
    d1, _ = s_alpha_grads(system, scheme, q0, pts)
    if forces:
        alpha0, _ = force_weights(system, scheme, q0, pts)
        d1 = d1 - alpha0
    return ((d1[:n] - d1[n:]) / (2.0 * dx[:, None])).T


def nondegeneracy_det(system: MechanicalSystem, scheme: Scheme, q0, q1, forces: bool = True) -> float:
    return float(np.linalg.det(nondegeneracy_matrix(system, scheme, q0, q1, forces)))


def preserving_momentum(system, scheme, q_prev, q_cur) -> np.ndarray:
    """Momentum at ``q_cur`` used by the preserving family.

    This is the second discrete Legendre momentum with its component along
    the constraint forces removed, ``Pcov(q_cur) (D2 S - alpha1)``, so that
    ``Psi(q_cur, p) = 0`` holds exactly.
    """
    _, p1 = discrete_legendre(system, scheme, q_prev, q_cur)
    return projectors(system, q_cur).Pcov @ p1


def _dla_solve(system, scheme, q_cur, p_cur, x0, cfg):
    n, m = system.n, system.m
    mu_cur = system.constraint_matrix(q_cur)
    h = scheme.h

    def residual(y):
        x, nu = y[..., :n], y[..., n:]
        d1, _ = s_alpha_grads(system, scheme, q_cur, x)
        r1 = p_cur + d1 - nu @ mu_cur
        r2 = constraint_value(system, 0.5 * (q_cur + x), (x - q_cur) / h)
        return np.concatenate([r1, r2], axis=-1)

    y0 = np.concatenate([x0, np.zeros(m)])
    res = newton_solve(residual, y0, _tolerance(cfg, p_cur), vectorized=True)
    det = float(np.linalg.det(res.jacobian[:n, :n]))
    _check_det(det, system, scheme)
    q_next = res.x[:n]
    _, p_next = s_alpha_grads(system, scheme, q_cur, q_next)
    phid = res.value[n:]
    return StepRecord(q_next, p_next, res.iterations, res.residual, det, phid, multiplier=res.x[n:])


def advance(system, scheme, method: str, q_cur, p_cur, x0, cfg: SolverConfig | None = None) -> StepRecord:
    """Solve for ``q_next`` given the momentum ``p_cur`` carried at ``q_cur``.

    ``x0`` is the Newton predictor.  This is the common kernel behind the
    two-point steppers and the initial step.
    """
    cfg = cfg or SolverConfig()
    if method == "dla":
        return _dla_solve(system, scheme, q_cur, p_cur, x0, cfg)
    res, det = _solve_from_momentum(system, scheme, q_cur, p_cur, x0, cfg)
    if method == "preserving":
        p_next = preserving_momentum(system, scheme, q_cur, res.x)
    else:
        _, p_next = discrete_legendre(system, scheme, q_cur, res.x)
    # p0(q_cur, x) = p_cur - R(x)
    phid = momentum_constraint(system, q_cur, p_cur - res.value)
    return StepRecord(res.x, p_next, res.iterations, res.residual, det, phid)


# ---------------------------------------------------------------------------
# public steppers


def gfni_step(system, scheme, q_prev, q_cur, cfg: SolverConfig | None = None) -> StepRecord:
    """One step of the generating-function nonholonomic integrator."""
    q_prev = np.asarray(q_prev, dtype=float)
    q_cur = np.asarray(q_cur, dtype=float)
    _, p_cur = discrete_legendre(system, scheme, q_prev, q_cur)
    return advance(system, scheme, "gfni", q_cur, p_cur, 2.0 * q_cur - q_prev, cfg)


def preserving_step(system, scheme, q_prev, q_cur, cfg: SolverConfig | None = None) -> StepRecord:
    """One step of the exactly constraint-preserving family."""
    q_prev = np.asarray(q_prev, dtype=float)
    q_cur = np.asarray(q_cur, dtype=float)
    p_cur = preserving_momentum(system, scheme, q_prev, q_cur)
    return advance(system, scheme, "preserving", q_cur, p_cur, 2.0 * q_cur - q_prev, cfg)


def dla_step(system, scheme, q_prev, q_cur, cfg: SolverConfig | None = None) -> StepRecord:
    """Discrete Lagrange-D'Alembert step with midpoint discrete constraint.

    The multiplier ``nu`` of ``nu_a mu^a(q_cur)`` is returned in
    ``StepRecord.multiplier``.
    """
    q_prev = np.asarray(q_prev, dtype=float)
    q_cur = np.asarray(q_cur, dtype=float)
    _, p_cur = s_alpha_grads(system, scheme, q_prev, q_cur)
    return advance(system, scheme, "dla", q_cur, p_cur, 2.0 * q_cur - q_prev, cfg)


def initial_step(system, scheme, q0, p0, cfg: SolverConfig | None = None, method: str = "gfni") -> StepRecord:
    """First step from phase-space data ``(q0, p0)`` on the constraint manifold."""
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    psi = momentum_constraint(system, q0, p0)
    if psi.size and np.max(np.abs(psi)) > 1e-9:
        raise InconsistentInitialDataError(
            f"initial momentum violates the constraint: |Psi(q0, p0)| = {np.max(np.abs(psi)):.3e}"
        )
    x0 = q0 + scheme.h * inverse_legendre(system, p0)
    return advance(system, scheme, method, q0, p0, x0, cfg)


def integrate(
    system: MechanicalSystem,
    method: str,
    scheme: Scheme,
    q0,
    v0,
    steps: int,
    cfg: SolverConfig | None = None,
    project_v0: bool = False,
) -> Trajectory:
    """Run ``steps`` steps of ``method`` from the tangent state ``(q0, v0)``.

    Implicit methods report ``v_k = g^-1 p_k`` where ``p_k`` is the momentum
    the step ending at ``q_k`` attaches to it.  On a step failure a
    :class:`StepFailure` carrying the partial trajectory is raised.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if steps < 0:
        raise ConfigurationError("number of steps must be non-negative")
    cfg = cfg or SolverConfig()
    q0 = np.asarray(q0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if q0.shape != (system.n,) or v0.shape != (system.n,):
        raise ConfigurationError(f"q0 and v0 must have length {system.n}")
    if project_v0 and system.m:
        v0 = projectors(system, q0).Pvec @ v0
    check_initial_data(system, q0, v0)
    if method == "rk4":
        return rk4_integrate(system, q0, v0, scheme.h, steps)

    n, m = system.n, system.m
    q = np.empty((steps + 1, n))
    p = np.empty((steps + 1, n))
    phid = np.full((steps + 1, m), np.nan)
    iters = np.full(steps + 1, np.nan)
    resid = np.full(steps + 1, np.nan)
    dets = np.full(steps + 1, np.nan)
    q[0] = q0
    p[0] = legendre(system, v0)
    k = 0
    try:
        for k in range(1, steps + 1):
            if k == 1:
                rec = initial_step(system, scheme, q[0], p[0], cfg, method=method)
            else:
                rec = advance(system, scheme, method, q[k - 1], p[k - 1], 2.0 * q[k - 1] - q[k - 2], cfg)
            q[k], p[k] = rec.q_next, rec.p_next
            phid[k] = rec.discrete_constraint_residual
            iters[k], resid[k], dets[k] = rec.newton_iters, rec.newton_residual, rec.nondegeneracy_det
    except (NonConvergenceError, CompatibilityError, np.linalg.LinAlgError) as exc:
        partial = _assemble(system, method, scheme.h, q[:k], p[:k], phid[:k], iters[:k], resid[:k], dets[:k])
        raise StepFailure(f"{method} failed at step {k}: {exc}", partial, k, exc) from exc
    return _assemble(system, method, scheme.h, q, p, phid, iters, resid, dets)


def _assemble(system, method, h, q, p, phid, iters, resid, dets):
    v = inverse_legendre(system, p)
    return Trajectory(
        system, method, h, q, v,
        energy=energy(system, q, v),
        psi=momentum_constraint(system, q, p),
        phid=phid, newton_iters=iters, newton_residual=resid, nondeg_det=dets,
    )
