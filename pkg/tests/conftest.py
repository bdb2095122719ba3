import numpy as np
import pytest

from nhint import SolverConfig, nonholonomic_particle, projectors

Q0 = np.array([1.0, 1.0, 0.0])
V0 = np.array([1.0, 0.5, 1.0])
TOL = 1e-12


@pytest.fixture
def particle():
    return nonholonomic_particle(True)


@pytest.fixture
def particle_free():
    return nonholonomic_particle(False)


@pytest.fixture
def cfg():
    return SolverConfig(tol=TOL)


def admissible(system, rng, count, scale=1.5):
    """Random (q, v) with v in the constraint distribution."""
    q = rng.uniform(-scale, scale, (count, system.n))
    v = rng.uniform(-scale, scale, (count, system.n))
    v = np.einsum("kij,kj->ki", projectors(system, q).Pvec, v)
    return q, v
