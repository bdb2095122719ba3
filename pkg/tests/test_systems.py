import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhint import (
    ConfigurationError,
    MechanicalSystem,
    TangentState,
    available_systems,
    builtin_system,
    constraint_gram,
    constraint_value,
    energy,
    free_particle,
    momentum_constraint,
    nonholonomic_particle,
    validate_system,
    without_constraints,
)

finite = st.floats(-5, 5, allow_nan=False)
vec3 = st.lists(finite, min_size=3, max_size=3).map(np.array)


def test_particle_constraint_matrix(particle):
    np.testing.assert_array_equal(particle.constraint_matrix(np.array([1.0, 1.0, 0.0])), [[-1.0, 0.0, 1.0]])


def test_particle_potential_at_origin(particle):
    q = np.zeros(3)
    assert particle.potential(q) == 0.0
    np.testing.assert_array_equal(particle.grad_potential(q), np.zeros(3))


def test_particle_free_shares_constraint(particle, particle_free):
    q = np.array([0.3, -1.2, 2.0])
    assert particle_free.potential(q) == 0.0
    np.testing.assert_array_equal(particle_free.constraint_matrix(q), particle.constraint_matrix(q))


def test_builtin_lookup():
    assert {"particle", "particle-free", "free"} <= set(available_systems())
    with pytest.raises(ConfigurationError):
        builtin_system("pendulum")


def test_module_factory_lookup():
    sys = builtin_system("nhint.systems:free_particle")
    assert sys.n == 3 and sys.m == 0
    with pytest.raises(ConfigurationError):
        builtin_system("nhint.systems:does_not_exist")


@pytest.mark.parametrize("q, det", [((0, 0, 0), 1.0), ((0, 1, 0), 2.0)])
def test_validate_gram_det(particle, q, det):
    rep = validate_system(particle, [TangentState(np.array(q, float), np.zeros(3))])
    assert rep.ok
    assert rep.samples[0].rank == 1
    assert rep.samples[0].gram_det == pytest.approx(det, abs=1e-15)


def test_validate_flags_rank_deficiency():
    degenerate = MechanicalSystem(
        "degenerate", 3, 1, np.eye(3),
        lambda q: np.zeros(np.shape(q)[:-1]), lambda q: np.zeros(np.shape(q)),
        lambda q: np.zeros(np.shape(q)[:-1] + (1, 3)), lambda q: np.zeros(np.shape(q)[:-1] + (1, 3, 3)),
    )
    rep = validate_system(degenerate, [np.zeros(3)])
    assert not rep.ok
    assert rep.failures[0].rank == 0


def test_metric_rejections():
    args = (lambda q: 0.0, lambda q: q, lambda q: q, lambda q: q)
    with pytest.raises(ConfigurationError):
        MechanicalSystem("callable", 2, 0, lambda q: np.eye(2), *args)
    with pytest.raises(ConfigurationError):
        MechanicalSystem("indefinite", 2, 0, np.diag([1.0, -1.0]), *args)
    with pytest.raises(ConfigurationError):
        MechanicalSystem("too many", 2, 2, np.eye(2), *args)


@pytest.mark.parametrize("q, v, expected", [
    ((1, 1, 0), (1, 1, 1), 0.0),
    ((0, 2, 0), (1, 0, 0), -2.0),
    ((0.4, -3, 2), (0, 0, 0), 0.0),
])
def test_constraint_value(particle, q, v, expected):
    np.testing.assert_array_equal(constraint_value(particle, np.array(q, float), np.array(v, float)), [expected])


@pytest.mark.parametrize("q, v, expected", [
    ((1, 1, 0), (1, 1, 1), 3.5),
    ((0, 0, 0), (0, 0, 0), 0.0),
    ((1, 0, 0), (0, 0, 0), 1.0),
])
def test_energy(particle, q, v, expected):
    assert energy(particle, np.array(q, float), np.array(v, float)) == pytest.approx(expected, abs=1e-15)


def test_momentum_constraint_matches_velocity_form(particle):
    q, v = np.array([0.2, -0.7, 1.0]), np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(momentum_constraint(particle, q, v), constraint_value(particle, q, v))


@settings(max_examples=50, deadline=None)
@given(vec3, vec3, vec3, finite, finite)
def test_constraint_linear_in_v(q, v, w, a, b):
    sys = nonholonomic_particle()
    lhs = constraint_value(sys, q, a * v + b * w)
    rhs = a * constraint_value(sys, q, v) + b * constraint_value(sys, q, w)
    scale = (1 + abs(a) + abs(b)) * (1 + np.abs(q).max()) * (1 + np.abs(v).max() + np.abs(w).max())
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-14 * scale)


@settings(max_examples=50, deadline=None)
@given(vec3, vec3)
def test_energy_bounded_by_potential(q, v):
    sys = nonholonomic_particle()
    kinetic = energy(sys, q, v) - sys.potential(q)
    assert kinetic >= 0
    if np.abs(v).max() >= 1e-3:
        assert kinetic > 0
    if not np.any(v):
        assert kinetic == 0


def test_supplied_derivatives_match_finite_differences(particle):
    rng = np.random.default_rng(3)
    for q in rng.uniform(-2, 2, (100, 3)):
        eps = 1e-6
        grad_fd = np.array([(particle.potential(q + eps * e) - particle.potential(q - eps * e)) / (2 * eps) for e in np.eye(3)])
        np.testing.assert_allclose(particle.grad_potential(q), grad_fd, rtol=1e-6, atol=1e-8)
        dmu_fd = np.stack([(particle.constraint_matrix(q + eps * e) - particle.constraint_matrix(q - eps * e)) / (2 * eps)
                           for e in np.eye(3)], axis=-1)
        np.testing.assert_allclose(particle.constraint_jacobian(q), dmu_fd, rtol=1e-6, atol=1e-8)


def test_batched_evaluation(particle):
    q = np.random.default_rng(0).normal(size=(4, 5, 3))
    assert particle.constraint_matrix(q).shape == (4, 5, 1, 3)
    assert constraint_gram(particle, q).shape == (4, 5, 1, 1)
    assert particle.potential(q).shape == (4, 5)


def test_without_constraints_and_free_particle(particle):
    bare = without_constraints(particle)
    assert bare.m == 0 and bare.n == 3
    q = np.array([1.0, 2.0, 3.0])
    assert bare.potential(q) == particle.potential(q)
    assert free_particle(2).constraint_matrix(np.zeros(2)).shape == (0, 2)
