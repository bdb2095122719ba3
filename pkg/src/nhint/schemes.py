"""Discrete generating function ``S_alpha``, discrete forces and projectors.

``S_alpha(q0, q1) = h L((1 - alpha) q0 + alpha q1, (q1 - q0) / h)`` and the
constraint force integrals are approximated at the same interior point with
weights ``(1 - alpha, alpha)``.  The symmetric variant averages the
``alpha`` and ``1 - alpha`` members.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .continuous import force_oneform
from .errors import CompatibilityError, ConfigurationError
from .systems import MechanicalSystem, constraint_gram, lagrangian, momentum_constraint


@dataclass(frozen=True)
class Scheme:
    alpha: float = 0.5
    h: float = 0.1
    symmetric: bool = False

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (self.h > 0.0 and np.isfinite(self.h)):
            raise ConfigurationError(f"step size must be positive, got {self.h}")

    def branches(self) -> list[tuple[float, float]]:
        """``(alpha, weight)`` pairs whose weighted sum defines the scheme."""
        if self.symmetric:
            return [(self.alpha, 0.5), (1.0 - self.alpha, 0.5)]
        return [(self.alpha, 1.0)]


class ProjectorPair(NamedTuple):
    """g-orthogonal projectors at ``q``.

    ``Pvec``/``Qvec`` act on tangent vectors (``v -> P v``) and project onto
    the constraint distribution and its orthogonal complement.  ``Pcov`` and
    ``Qcov`` act on covectors and are their metric adjoints.
    """

    q: np.ndarray
    Qvec: np.ndarray
    Pvec: np.ndarray
    Qcov: np.ndarray
    Pcov: np.ndarray


def projectors(system: MechanicalSystem, q) -> ProjectorPair:
    q = np.asarray(q, dtype=float)
    n = system.n
    eye = np.broadcast_to(np.eye(n), q.shape[:-1] + (n, n))
    if system.m == 0:
        zero = np.zeros(q.shape[:-1] + (n, n))
        return ProjectorPair(q, zero, eye.copy(), zero.copy(), eye.copy())
    mu = system.constraint_matrix(q)
    gram = constraint_gram(system, q)
    if system.m == 1:
        c = gram[..., 0, 0]
        if np.any(~(c > 0)):
            raise CompatibilityError("constraint Gram matrix is singular")
        gram_inv = 1.0 / gram
    else:
        try:
            np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            raise CompatibilityError("constraint Gram matrix is singular") from None
        gram_inv = np.linalg.inv(gram)
    mu_t = np.swapaxes(mu, -1, -2)
    # Z^a = g^-1 mu^a as columns
    z = system.metric_inv @ mu_t
    qvec = z @ gram_inv @ mu
    qcov = mu_t @ gram_inv @ mu @ system.metric_inv
    return ProjectorPair(q, qvec, eye - qvec, qcov, eye - qcov)


def _interior(q0, q1, a):
    return (1.0 - a) * q0 + a * q1


def s_alpha(system: MechanicalSystem, scheme: Scheme, q0, q1) -> np.ndarray:
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    h = scheme.h
    vel = (q1 - q0) / h
    return sum(w * h * lagrangian(system, _interior(q0, q1, a), vel) for a, w in scheme.branches())


def s_alpha_grads(system: MechanicalSystem, scheme: Scheme, q0, q1) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives ``(D1 S, D2 S)`` of the discrete generating function."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    h = scheme.h
    momentum = ((q1 - q0) / h) @ system.metric
    d1 = -momentum
    d2 = momentum.copy()
    for a, w in scheme.branches():
        grad = system.grad_potential(_interior(q0, q1, a))
        d1 = d1 - (w * h * (1.0 - a)) * grad
        d2 = d2 - (w * h * a) * grad
    return d1, d2


def force_weights(system: MechanicalSystem, scheme: Scheme, q0, q1) -> tuple[np.ndarray, np.ndarray]:
    """Discrete force covectors ``(alpha0, alpha1)`` attached to ``q0`` and ``q1``."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    h = scheme.h
    vel = (q1 - q0) / h
    alpha0 = np.zeros(np.broadcast_shapes(q0.shape, q1.shape))
    alpha1 = alpha0.copy()
    if system.m == 0:
        return alpha0, alpha1
    for a, w in scheme.branches():
        force = h * w * force_oneform(system, _interior(q0, q1, a), vel)
        alpha0 = alpha0 + (1.0 - a) * force
        alpha1 = alpha1 + a * force
    return alpha0, alpha1


def discrete_legendre(system: MechanicalSystem, scheme: Scheme, q0, q1) -> tuple[np.ndarray, np.ndarray]:
    """Boundary momenta ``p0 = -D1 S + alpha0``, ``p1 = D2 S - alpha1``."""
    d1, d2 = s_alpha_grads(system, scheme, q0, q1)
    alpha0, alpha1 = force_weights(system, scheme, q0, q1)
    return -d1 + alpha0, d2 - alpha1


def discrete_constraint(system: MechanicalSystem, scheme: Scheme, q0, q1) -> np.ndarray:
    """``Psi(q0, p0)`` with ``p0`` the first discrete Legendre momentum."""
    p0, _ = discrete_legendre(system, scheme, q0, q1)
    return momentum_constraint(system, q0, p0)


__all__ = [
    "Scheme",
    "ProjectorPair",
    "projectors",
    "s_alpha",
    "s_alpha_grads",
    "force_weights",
    "discrete_legendre",
    "discrete_constraint",
]
