import numpy as np
import pytest

from conftest import Q0, TOL, V0
from nhint import (
    InconsistentInitialDataError,
    NonConvergenceError,
    Scheme,
    SolverConfig,
    StepFailure,
    discrete_constraint,
    discrete_legendre,
    dla_step,
    free_particle,
    gfni_step,
    initial_step,
    integrate,
    momentum_constraint,
    newton_solve,
    nondegeneracy_det,
    preserving_step,
    projectors,
    without_constraints,
)
from nhint.steppers import preserving_momentum

A = np.array
Y2 = 1.99 / 10.05
Y1 = 1 / 10.05
STEPPERS = {"gfni": gfni_step, "preserving": preserving_step, "dla": dla_step}


def test_newton_scalar():
    res = newton_solve(lambda x: x ** 2 - 4, A([3.0]), SolverConfig(tol=1e-12))
    assert res.x[0] == pytest.approx(2.0, abs=1e-12)


def test_newton_affine_one_iteration():
    a = A([[3.0, 1.0], [1.0, 2.0]])
    b = A([1.0, -1.0])
    res = newton_solve(lambda x: a @ x - b, np.zeros(2), SolverConfig(tol=1e-12))
    assert res.iterations == 1
    np.testing.assert_allclose(res.x, np.linalg.solve(a, b), atol=1e-12)


def test_newton_vectorized_matches_loop():
    f = lambda x: np.stack([x[..., 0] ** 3 - x[..., 1], x[..., 1] ** 2 - 1.0], axis=-1)
    r1 = newton_solve(f, A([1.5, 0.5]), vectorized=True)
    r2 = newton_solve(f, A([1.5, 0.5]))
    np.testing.assert_allclose(r1.x, [1.0, 1.0], atol=1e-12)
    np.testing.assert_array_equal(r1.x, r2.x)


def test_newton_no_root():
    with pytest.raises(NonConvergenceError) as info:
        newton_solve(lambda x: np.ones_like(x), A([0.0]))
    assert info.value.x is not None


@pytest.mark.parametrize("method", list(STEPPERS))
@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_uniform_translation(particle_free, method, alpha, cfg):
    rec = STEPPERS[method](particle_free, Scheme(alpha, 0.1), np.zeros(3), A([0, 0.1, 0]), cfg)
    np.testing.assert_allclose(rec.q_next, [0, 0.2, 0], atol=10 * TOL)


def test_free_particle_discrete_euler_lagrange(cfg):
    sys = free_particle(3)
    q_prev, q_cur = A([0.1, -0.3, 0.2]), A([0.4, 0.1, 0.0])
    rec = gfni_step(sys, Scheme(0.5, 0.1), q_prev, q_cur, cfg)
    np.testing.assert_allclose(rec.q_next, 2 * q_cur - q_prev, atol=10 * TOL)


@pytest.mark.parametrize("method", list(STEPPERS))
def test_decoupled_y_golden(particle, method, cfg):
    rec = STEPPERS[method](particle, Scheme(0.5, 0.1), np.zeros(3), A([0, 0.1, 0]), cfg)
    np.testing.assert_allclose(rec.q_next, [0, Y2, 0], atol=1e-9)
    if method == "dla":
        np.testing.assert_allclose(rec.multiplier, [0.0], atol=1e-12)


def test_dla_translation_multiplier(particle_free, cfg):
    rec = dla_step(particle_free, Scheme(0.5, 0.1), np.zeros(3), A([0, 0.1, 0]), cfg)
    np.testing.assert_allclose(rec.multiplier, [0.0], atol=1e-12)


@pytest.mark.parametrize("q0, p0, q1", [
    ((0, 0, 0), (0, 1, 0), (0, Y1, 0)),
    ((0, 0, 0), (1, 0, 0), (Y1, 0, 0)),
    ((0, 0, 0), (0, 0, 0), (0, 0, 0)),
])
def test_initial_step_golden(particle, q0, p0, q1, cfg):
    rec = initial_step(particle, Scheme(0.5, 0.1), A(q0, float), A(p0, float), cfg)
    np.testing.assert_allclose(rec.q_next, q1, atol=1e-9)


def test_initial_step_rejects_inconsistent(particle):
    with pytest.raises(InconsistentInitialDataError):
        initial_step(particle, Scheme(0.5, 0.1), A([0.0, 1.0, 0.0]), A([1.0, 0.0, 0.0]))


def test_preserving_step_satisfies_discrete_constraint(particle, cfg):
    scheme = Scheme(0.5, 0.1)
    traj = integrate(particle, "gfni", scheme, Q0, V0, 5, cfg)
    rng = np.random.default_rng(0)
    for k in range(1, 5):
        q_prev = traj.q[k - 1] + 1e-3 * rng.normal(size=3)
        rec = preserving_step(particle, scheme, q_prev, traj.q[k], cfg)
        assert np.max(np.abs(discrete_constraint(particle, scheme, traj.q[k], rec.q_next))) <= 10 * TOL
        assert np.max(np.abs(momentum_constraint(particle, rec.q_next, rec.p_next))) <= 10 * TOL


def test_preserving_projection_identity(particle, cfg):
    # at a root, Qcov applied to the assembled residual reproduces the discrete constraint
    scheme = Scheme(0.3, 0.1)
    traj = integrate(particle, "preserving", scheme, Q0, V0, 20, cfg)
    for k in range(2, 20):
        q_prev, q_cur, q_next = traj.q[k - 2], traj.q[k - 1], traj.q[k]
        p0, _ = discrete_legendre(particle, scheme, q_cur, q_next)
        assembled = p0 - preserving_momentum(particle, scheme, q_prev, q_cur)
        qcov = projectors(particle, q_cur).Qcov
        lhs = momentum_constraint(particle, q_cur, qcov @ assembled)
        np.testing.assert_allclose(lhs, discrete_constraint(particle, scheme, q_cur, q_next), atol=1e-12)


def test_integrate_free_translation(particle_free, cfg):
    traj = integrate(particle_free, "gfni", Scheme(0.5, 0.1), np.zeros(3), A([0, 1.0, 0]), 10, cfg)
    np.testing.assert_allclose(traj.q[-1], [0, 1, 0], atol=10 * TOL)
    np.testing.assert_allclose(traj.v[-1], [0, 1, 0], atol=10 * TOL)


@pytest.mark.parametrize("method", ["rk4", "dla", "gfni", "preserving"])
def test_integrate_zero_steps(particle, method):
    traj = integrate(particle, method, Scheme(0.5, 0.1), Q0, V0, 0)
    assert traj.q.shape == (1, 3)
    np.testing.assert_array_equal(traj.q[0], Q0)


def test_integrate_rejects_inconsistent_unless_projected(particle):
    v_bad = A([1.0, 0.0, 0.0])
    with pytest.raises(InconsistentInitialDataError):
        integrate(particle, "gfni", Scheme(), Q0, v_bad, 3)
    traj = integrate(particle, "gfni", Scheme(), Q0, v_bad, 3, project_v0=True)
    assert abs(traj.psi[0, 0]) <= 1e-15


def test_preserving_long_run(particle, cfg):
    traj = integrate(particle, "preserving", Scheme(0.5, 0.1), Q0, V0, 1000, cfg)
    assert np.max(np.abs(traj.psi)) <= 10 * TOL


def test_row_conventions(particle, cfg):
    traj = integrate(particle, "gfni", Scheme(0.5, 0.1), Q0, V0, 3, cfg)
    assert np.isnan(traj.phid[0]).all() and np.isnan(traj.newton_iters[0])
    assert np.all(traj.newton_iters[1:] >= 1)
    assert np.all(traj.newton_residual[1:] <= 10 * TOL)
    assert np.all(traj.nondeg_det[1:] < 0)


@pytest.mark.parametrize("alpha", [0.5, 0.2])
def test_unconstrained_method_equivalence(particle, alpha, cfg):
    bare = without_constraints(particle)
    scheme = Scheme(alpha, 0.1)
    runs = {m: integrate(bare, m, scheme, Q0, A([1.0, 0.5, -0.3]), 50, cfg) for m in ("gfni", "preserving", "dla")}
    np.testing.assert_allclose(runs["preserving"].q, runs["gfni"].q, atol=10 * TOL)
    np.testing.assert_allclose(runs["dla"].q, runs["gfni"].q, atol=10 * TOL)


@pytest.mark.parametrize("scheme", [Scheme(0.5, 0.1), Scheme(0.3, 0.1, symmetric=True)])
def test_symmetric_reversibility(particle, scheme, cfg):
    bare = without_constraints(particle)
    q_prev, q_cur = A([0.3, 0.2, -0.1]), A([0.35, 0.18, -0.05])
    q_next = gfni_step(bare, scheme, q_prev, q_cur, cfg).q_next
    back = gfni_step(bare, scheme, q_next, q_cur, cfg).q_next
    np.testing.assert_allclose(back, q_prev, atol=10 * TOL)


def test_nondegeneracy_free_system(particle_free):
    det = nondegeneracy_det(particle_free, Scheme(0.5, 0.1), np.zeros(3), np.zeros(3))
    assert det == pytest.approx(-1000.0, rel=1e-9)
    det = nondegeneracy_det(free_particle(3), Scheme(0.5, 0.1), A([0.1, 0.2, 0.3]), A([0.4, -0.2, 0.1]))
    assert det == pytest.approx(-1000.0, rel=1e-9)


def test_step_failure_keeps_partial_trajectory(particle):
    cfg = SolverConfig(tol=1e-30, max_iter=2)
    with pytest.raises(StepFailure) as info:
        integrate(particle, "gfni", Scheme(0.5, 0.1), Q0, V0, 5, cfg)
    assert info.value.step_index == 1
    assert len(info.value.trajectory.q) == 1
