"""Numerical check of the exact-flow generating-function identities.

Along a nonholonomic trajectory ``q(t)`` from ``q0`` to ``q1 = q(h)`` with
action ``S = int_0^h L dt``, every variation ``dq(t)`` through nearby
nonholonomic trajectories satisfies

    p1 . dq(h) - p0 . dq(0) = dS - int_0^h Lambda(q, q') . dq(t) dt.

Varied trajectories are obtained by shooting.  A boundary value problem
from ``q0`` to an arbitrary ``q1`` is only solvable on a codimension-``m``
set, so every perturbed endpoint is corrected along the ``g^-1 mu^T``
directions at the opposite (or same) end; the correction is part of the
shooting unknowns and enters the identity through ``dq`` at the endpoints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import null_space

from .continuous import check_initial_data, force_oneform, nonholonomic_field, rk4_flow
from .errors import NonConvergenceError, SolvabilityError
from .schemes import projectors
from .steppers import SolverConfig, newton_solve
from .systems import MechanicalSystem, lagrangian, legendre


def _rk4_deviation(system, qb, vb, dq, dv, T, substeps):
    """RK4 for a base trajectory and a batch of deviations from it.

    The perturbed state is ``base + deviation`` and both share the same
    RK4 tableau, so the sum is exactly the RK4 solution from the perturbed
    initial state.  Propagating deviations directly keeps their roundoff
    relative to their own size, which central differences need.
    """
    dt = T / substeps
    out_qb = np.empty((substeps + 1,) + qb.shape)
    out_vb = np.empty_like(out_qb)
    out_dq = np.empty((substeps + 1,) + dq.shape)
    out_dv = np.empty_like(out_dq)
    out_qb[0], out_vb[0], out_dq[0], out_dv[0] = qb, vb, dq, dv

    def accel(q, v):
        return nonholonomic_field(system, q, v)[1]

    for k in range(substeps):
        stages = []
        sq, sv, sdq, sdv = qb, vb, dq, dv
        for c in (0.5, 0.5, 1.0, None):
            ab = accel(sq, sv)
            ad = accel(sq + sdq, sv + sdv) - ab
            stages.append((sv, ab, sdv, ad))
            if c is None:
                break
            sq, sv = qb + c * dt * sv, vb + c * dt * ab
            sdq, sdv = dq + c * dt * sdv, dv + c * dt * ad
        wts = (1.0, 2.0, 2.0, 1.0)
        qb = qb + dt / 6.0 * sum(w * st[0] for w, st in zip(wts, stages))
        vb = vb + dt / 6.0 * sum(w * st[1] for w, st in zip(wts, stages))
        dq = dq + dt / 6.0 * sum(w * st[2] for w, st in zip(wts, stages))
        dv = dv + dt / 6.0 * sum(w * st[3] for w, st in zip(wts, stages))
        out_qb[k + 1], out_vb[k + 1], out_dq[k + 1], out_dv[k + 1] = qb, vb, dq, dv
    return out_qb, out_vb, out_dq, out_dv


class _Segment:
    """Shooting problem ``qa -> qb`` over time ``T``.

    Unknowns are ``u = (w, s)``: the initial velocity ``Pvec(start) B w``
    (``B`` a fixed basis of the admissible velocities at ``qa``) and the
    endpoint correction ``s`` applied along ``g^-1 mu^T`` at ``comp`` end.
    """

    def __init__(self, system, qa, qb, T, substeps, comp="end"):
        self.system = system
        self.qa = np.asarray(qa, dtype=float)
        self.qb = np.asarray(qb, dtype=float)
        self.T = T
        self.substeps = substeps
        self.comp = comp if system.m else None
        mu_a = system.constraint_matrix(self.qa)
        self.basis = null_space(mu_a) if system.m else np.eye(system.n)
        anchor = self.qb if comp == "end" else self.qa
        self.zdirs = system.metric_inv @ system.constraint_matrix(anchor).T if system.m else np.zeros((system.n, 0))
        self.nw = self.basis.shape[1]

    def _velocity(self, start, w):
        v = w @ self.basis.T
        if self.system.m:
            v = np.einsum("...ij,...j->...i", projectors(self.system, start).Pvec, v)
        return v

    def _shifts(self, u):
        shift = u[..., self.nw:] @ self.zdirs.T
        zero = np.zeros_like(shift)
        return (shift, zero) if self.comp == "start" else (zero, shift) if self.comp == "end" else (zero, zero)

    def flow(self, u):
        s_start, s_end = self._shifts(u)
        start = self.qa + s_start
        qs, vs = rk4_flow(self.system, start, self._velocity(start, u[..., : self.nw]), self.T, self.substeps)
        return qs, vs, qs[-1] - self.qb - s_end

    def initial_guess(self, v0):
        return np.concatenate([self.basis.T @ np.asarray(v0, dtype=float), np.zeros(self.zdirs.shape[1])])

    def solve_base(self, v0, tol):
        try:
            res = newton_solve(lambda u: self.flow(u)[2], self.initial_guess(v0),
                               SolverConfig(tol=tol, max_iter=30), vectorized=True)
        except NonConvergenceError as exc:
            raise SolvabilityError(f"shooting failed: {exc}", exc.x, exc.residual) from exc
        self.u_base = res.x
        self.jacobian = res.jacobian
        s_start, _ = self._shifts(res.x)
        self.start_base = self.qa + s_start
        self.v_base = self._velocity(self.start_base, res.x[: self.nw])
        return res

    def deviations(self, du, da, db):
        """Perturbed trajectories as deviations from the base solution."""
        s_start, s_end = self._shifts(du)
        start = self.start_base + da + s_start
        w = self.u_base[: self.nw]
        dv0 = self._velocity(start, du[..., : self.nw])
        if self.system.m:
            dv0 = dv0 + self._velocity(start, w) - self.v_base
        dq0 = da + s_start
        qb, vb, dq, dv = _rk4_deviation(self.system, self.start_base, self.v_base, dq0, dv0, self.T, self.substeps)
        return qb, vb, dq, dv, dq[-1] - db - s_end

    def solve_batch(self, da, db, tol, max_iter=30):
        """Chord iteration for many perturbed problems at once."""
        du = np.zeros((len(da), len(self.u_base)))
        jinv = np.linalg.pinv(self.jacobian)
        prev = np.inf
        for _ in range(max_iter):
            qb, vb, dq, dv, r = self.deviations(du, da, db)
            err = float(np.max(np.abs(r)))
            if err <= tol or (err >= 0.5 * prev and err <= 1e3 * tol):
                return qb, vb, dq, dv
            prev = err
            du = du - r @ jinv.T
        raise SolvabilityError(f"perturbed shooting did not converge (residual {err:.3e})", du, err)


def shoot(system: MechanicalSystem, q0, q1, T: float, v_guess=None, substeps: int = 100, tol: float = 1e-12):
    """Solve the two-point problem ``q(0) = q0``, ``q(T) = q1``.

    Returns the initial velocity (admissible at ``q0``).  Raises
    :class:`SolvabilityError` when ``q1`` is not reachable, which for
    ``m > 0`` is the generic case.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    seg = _Segment(system, q0, q1, T, substeps, comp=None)
    seg.zdirs = np.zeros((system.n, 0))
    if v_guess is None:
        v_guess = (q1 - q0) / T
    u = seg.basis.T @ np.asarray(v_guess, dtype=float)
    for _ in range(50):
        pts = np.repeat(u[None, :], seg.nw + 1, axis=0)
        step = np.sqrt(np.finfo(float).eps) * np.maximum(1.0, np.abs(u))
        pts[np.arange(1, seg.nw + 1), np.arange(seg.nw)] += step
        r_all = seg.flow(pts)[2]
        r = r_all[0]
        if np.max(np.abs(r)) <= tol:
            return seg.basis @ u if not system.m else projectors(system, q0).Pvec @ (seg.basis @ u)
        jac = (r_all[1:] - r).T / step
        du, *_ = np.linalg.lstsq(jac, -r, rcond=None)
        if np.max(np.abs(du)) <= 1e-14 * max(1.0, np.max(np.abs(u))):
            break
        u = u + du
    raise SolvabilityError(
        f"endpoint not reachable from q0 in time {T} (residual {np.max(np.abs(r)):.3e})", u, float(np.max(np.abs(r)))
    )


@dataclass
class IdentityReport:
    """Residuals of the exact-flow identities at one base state.

    ``first_line[j]``/``second_line[j]`` are the residuals of the momentum
    identities for perturbations of ``q0``/``q1`` along coordinate ``j``;
    ``stationarity[j]`` is the two-step stationarity residual for
    perturbations of the middle point; ``additivity`` is the relative
    defect of ``S^{2h}(q0, q2) = S^h(q0, q1) + S^h(q1, q2)``.
    """

    first_line: np.ndarray
    second_line: np.ndarray
    stationarity: np.ndarray
    additivity: float
    action: float
    action_2h: float

    @property
    def max_momentum_residual(self) -> float:
        return float(max(np.max(np.abs(self.first_line)), np.max(np.abs(self.second_line))))

    @property
    def max_stationarity_residual(self) -> float:
        return float(np.max(np.abs(self.stationarity)))


def _action(system, qs, vs, dt):
    return simpson(lagrangian(system, qs, vs), dx=dt, axis=0)


def _lagrangian_change(system, qb, vb, dq, dv):
    """``L(qb + dq, vb + dv) - L(qb, vb)`` without forming the full states."""
    qb = qb[:, None, :]
    vb = vb[:, None, :]
    gv = (vb + 0.5 * dv) @ system.metric
    return np.einsum("...i,...i->...", dv, gv) - (system.potential(qb + dq) - system.potential(qb))


def _variations(system, seg, perturb, eps, tol):
    """Central-difference variations for ``+-eps e_j`` at one end.

    Returns ``(dS, force_work, dq)`` with ``dq`` of shape ``(t, n, n)``.
    """
    n = system.n
    dt = seg.T / seg.substeps
    scale = eps * np.maximum(1.0, np.abs(seg.qa if perturb == "start" else seg.qb))
    offsets = np.concatenate([np.diag(scale), -np.diag(scale)])
    zero = np.zeros_like(offsets)
    da, db = (offsets, zero) if perturb == "start" else (zero, offsets)
    qb, vb, dq, dv = seg.solve_batch(da, db, tol)
    change = simpson(_lagrangian_change(system, qb, vb, dq, dv), dx=dt, axis=0)
    d_action = (change[:n] - change[n:]) / (2.0 * scale)
    variation = (dq[:, :n] - dq[:, n:]) / (2.0 * scale[None, :, None])
    force = force_oneform(system, qb, vb)
    work = simpson(np.einsum("ti,tji->tj", force, variation), dx=dt, axis=0)
    return d_action, work, variation


def verify_exact_identities(
    system: MechanicalSystem,
    q0,
    v0,
    h: float,
    substeps: int = 100,
    eps: float = 1e-5,
    tol: float = 1e-15,
) -> IdentityReport:
    """Check the generating-function identities of the exact nonholonomic flow.

    The base trajectory over ``[0, 2h]`` is integrated with RK4 at step
    ``h / substeps``; actions and force integrals use composite Simpson on the
    same grid; derivatives are central differences with step
    ``eps * max(1, |q|)`` of whole re-shot trajectories.
    """
    q0 = np.asarray(q0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    check_initial_data(system, q0, v0)
    dt = h / substeps
    qs, vs = rk4_flow(system, q0, v0, 2.0 * h, 2 * substeps)
    q1, q2 = qs[substeps], qs[-1]
    p0, p1, p2 = legendre(system, v0), legendre(system, vs[substeps]), legendre(system, vs[-1])
    shoot_tol = 1e-13 * max(1.0, float(np.max(np.abs(qs))))

    # segment (q0, q1) with the endpoint correction at q1
    seg = _Segment(system, q0, q1, h, substeps, comp="end")
    seg.solve_base(v0, shoot_tol)
    first = np.empty(system.n)
    second = np.empty(system.n)
    for line, perturb in ((first, "start"), (second, "end")):
        d_action, work, dq = _variations(system, seg, perturb, eps, tol)
        # p1 . dq(h) - p0 . dq(0) - (dS - work) for every direction j
        line[:] = dq[-1] @ p1 - dq[0] @ p0 - (d_action - work)

    # two-step stationarity at q1: vary q1 with q0 and q2 corrected
    seg_a = _Segment(system, q0, q1, h, substeps, comp="start")
    seg_a.solve_base(v0, shoot_tol)
    dsa, wa, dqa = _variations(system, seg_a, "end", eps, tol)
    seg_b = _Segment(system, q1, q2, h, substeps, comp="end")
    seg_b.solve_base(vs[substeps], shoot_tol)
    dsb, wb, dqb = _variations(system, seg_b, "start", eps, tol)
    stationarity = (dsa - wa + dqa[0] @ p0) + (dsb - wb - dqb[-1] @ p2)

    # additivity of the action along the composed trajectory
    actions = []
    for segment in (seg, seg_b, _Segment(system, q0, q2, 2.0 * h, 2 * substeps, comp="end")):
        if segment is not seg and segment is not seg_b:
            segment.solve_base(v0, shoot_tol)
        bq, bv, _ = segment.flow(segment.u_base)
        actions.append(float(_action(system, bq, bv, dt)))
    action, action_b, action_2h = actions
    denom = max(abs(action_2h), abs(action) + abs(action_b), np.finfo(float).tiny)
    additivity = abs(action_2h - action - action_b) / denom

    return IdentityReport(first, second, stationarity, additivity, action, action_2h)


def random_admissible_states(system: MechanicalSystem, count: int, seed: int = 0, scale: float = 1.0):
    """Random ``(q, v)`` pairs with ``v`` projected onto the constraints."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        q = rng.uniform(-scale, scale, system.n)
        v = projectors(system, q).Pvec @ rng.uniform(-scale, scale, system.n)
        out.append((q, v))
    return out
