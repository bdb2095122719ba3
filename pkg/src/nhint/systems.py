"""Mechanical systems with linear nonholonomic constraints.

A system is ``L(q, v) = 1/2 v^T g v - V(q)`` with constraints
``mu(q) v = 0``.  Every callable on a system broadcasts over leading axes of
``q`` so that batches of configurations can be evaluated in one call.
"""
from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigurationError

ArrayFn = Callable[[np.ndarray], np.ndarray]


class TangentState(NamedTuple):
    q: np.ndarray
    v: np.ndarray


class PhasePoint(NamedTuple):
    q: np.ndarray
    p: np.ndarray


@dataclass(frozen=True, eq=False)
class MechanicalSystem:
    """Immutable description of a constrained mechanical system.

    Parameters
    ----------
    n, m
        Configuration dimension and number of constraints, ``0 <= m < n``.
    metric
        Constant symmetric positive-definite ``(n, n)`` matrix.  Callables
        (position-dependent metrics) are rejected.
    potential, grad_potential
        ``V(q)`` with shape ``q.shape[:-1]`` and ``dV/dq`` with shape of ``q``.
    constraint_matrix
        ``mu(q)`` with shape ``q.shape[:-1] + (m, n)``.
    constraint_jacobian
        ``d mu^a_i / d q^j`` with shape ``q.shape[:-1] + (m, n, n)``, indexed
        ``[..., a, i, j]``.
    """

    name: str
    n: int
    m: int
    metric: np.ndarray
    potential: ArrayFn
    grad_potential: ArrayFn
    constraint_matrix: ArrayFn
    constraint_jacobian: ArrayFn
    metric_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if callable(self.metric):
            raise ConfigurationError(
                f"system {self.name!r}: position-dependent metrics are not supported"
            )
        if not (0 <= self.m < self.n):
            raise ConfigurationError(f"system {self.name!r}: need 0 <= m < n, got m={self.m}, n={self.n}")
        g = np.array(self.metric, dtype=float)
        if g.shape != (self.n, self.n):
            raise ConfigurationError(f"system {self.name!r}: metric must be {self.n}x{self.n}")
        if not np.allclose(g, g.T, rtol=0, atol=1e-14 * max(1.0, np.abs(g).max())):
            raise ConfigurationError(f"system {self.name!r}: metric is not symmetric")
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise ConfigurationError(f"system {self.name!r}: metric is not positive definite") from None
        g.setflags(write=False)
        g_inv = np.linalg.inv(g)
        g_inv = 0.5 * (g_inv + g_inv.T)
        g_inv.setflags(write=False)
        object.__setattr__(self, "metric", g)
        object.__setattr__(self, "metric_inv", g_inv)


# ---------------------------------------------------------------------------
# pointwise quantities


def legendre(system: MechanicalSystem, v: np.ndarray) -> np.ndarray:
    """Momentum ``p = g v``."""
    return np.asarray(v, dtype=float) @ system.metric


def inverse_legendre(system: MechanicalSystem, p: np.ndarray) -> np.ndarray:
    """Velocity ``v = g^-1 p``."""
    return np.asarray(p, dtype=float) @ system.metric_inv


def constraint_value(system: MechanicalSystem, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``phi(q, v) = mu(q) v``, shape ``(..., m)``."""
    mu = system.constraint_matrix(np.asarray(q, dtype=float))
    return np.einsum("...ai,...i->...a", mu, np.asarray(v, dtype=float))


def momentum_constraint(system: MechanicalSystem, q: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Constraint pushed to momenta, ``Psi(q, p) = mu(q) g^-1 p``."""
    return constraint_value(system, q, inverse_legendre(system, p))


def energy(system: MechanicalSystem, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``1/2 v^T g v + V(q)``."""
    v = np.asarray(v, dtype=float)
    kinetic = 0.5 * np.einsum("...i,...i->...", v @ system.metric, v)
    return kinetic + system.potential(np.asarray(q, dtype=float))


def lagrangian(system: MechanicalSystem, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    kinetic = 0.5 * np.einsum("...i,...i->...", v @ system.metric, v)
    return kinetic - system.potential(np.asarray(q, dtype=float))


def constraint_gram(system: MechanicalSystem, q: np.ndarray) -> np.ndarray:
    """``C = mu g^-1 mu^T``, shape ``(..., m, m)``."""
    mu = system.constraint_matrix(np.asarray(q, dtype=float))
    return mu @ system.metric_inv @ np.swapaxes(mu, -1, -2)


# ---------------------------------------------------------------------------
# validation


@dataclass
class SampleCheck:
    q: np.ndarray
    rank: int
    gram_det: float
    ok: bool


@dataclass
class ValidationReport:
    system: str
    m: int
    metric_spd: bool
    samples: list[SampleCheck]

    @property
    def ok(self) -> bool:
        return self.metric_spd and all(s.ok for s in self.samples)

    @property
    def failures(self) -> list[SampleCheck]:
        return [s for s in self.samples if not s.ok]


def validate_system(system: MechanicalSystem, samples) -> ValidationReport:
    """Check admissibility (rank of ``mu``) and compatibility (``det C``).

    ``samples`` is an iterable of configurations or :class:`TangentState`
    values; only the configuration part is used.
    """
    samples = list(samples)
    if not samples:
        raise ConfigurationError("validate_system needs at least one sample")
    try:
        np.linalg.cholesky(system.metric)
        spd = True
    except np.linalg.LinAlgError:
        spd = False
    checks = []
    for s in samples:
        q = np.asarray(s.q if isinstance(s, TangentState) else s, dtype=float)
        mu = system.constraint_matrix(q)
        if system.m == 0:
            checks.append(SampleCheck(q, 0, 1.0, True))
            continue
        rank = int(np.linalg.matrix_rank(mu))
        det = float(np.linalg.det(constraint_gram(system, q)))
        # scale of det C: product of squared row norms of mu under g^-1
        scale = float(np.prod(np.einsum("ai,ij,aj->a", mu, system.metric_inv, mu)))
        ok = rank == system.m and abs(det) >= 1e-12 * max(scale, np.finfo(float).tiny)
        checks.append(SampleCheck(q, rank, det, ok))
    return ValidationReport(system.name, system.m, spd, checks)


# ---------------------------------------------------------------------------
# built-in systems


def _particle_potential(q):
    return q[..., 0] ** 2 + q[..., 1] ** 2


def _particle_grad(q):
    out = 2.0 * np.asarray(q, dtype=float)
    out[..., 2] = 0.0
    return out


def _zero_potential(q):
    return np.zeros(np.shape(q)[:-1])


def _zero_grad(q):
    return np.zeros(np.shape(q))


def _particle_mu(q):
    q = np.asarray(q, dtype=float)
    mu = np.zeros(q.shape[:-1] + (1, 3))
    mu[..., 0, 0] = -q[..., 1]
    mu[..., 0, 2] = 1.0
    return mu


def _particle_dmu(q):
    dmu = np.zeros(np.shape(q)[:-1] + (1, 3, 3))
    dmu[..., 0, 0, 1] = -1.0
    return dmu


def nonholonomic_particle(potential: bool = True) -> MechanicalSystem:
    """Particle in R^3 with ``z' = y x'`` and, optionally, ``V = x^2 + y^2``."""
    return MechanicalSystem(
        name="particle" if potential else "particle-free",
        n=3,
        m=1,
        metric=np.eye(3),
        potential=_particle_potential if potential else _zero_potential,
        grad_potential=_particle_grad if potential else _zero_grad,
        constraint_matrix=_particle_mu,
        constraint_jacobian=_particle_dmu,
    )


def without_constraints(system: MechanicalSystem) -> MechanicalSystem:
    """Same Lagrangian with the constraints dropped (``m = 0``)."""
    n = system.n

    def mu(q):
        return np.zeros(np.shape(q)[:-1] + (0, n))

    def dmu(q):
        return np.zeros(np.shape(q)[:-1] + (0, n, n))

    return MechanicalSystem(
        name=f"{system.name}-unconstrained",
        n=n,
        m=0,
        metric=system.metric,
        potential=system.potential,
        grad_potential=system.grad_potential,
        constraint_matrix=mu,
        constraint_jacobian=dmu,
    )


def free_particle(n: int = 3) -> MechanicalSystem:
    """Unconstrained free particle with identity mass."""
    return MechanicalSystem(
        name="free",
        n=n,
        m=0,
        metric=np.eye(n),
        potential=_zero_potential,
        grad_potential=_zero_grad,
        constraint_matrix=lambda q: np.zeros(np.shape(q)[:-1] + (0, n)),
        constraint_jacobian=lambda q: np.zeros(np.shape(q)[:-1] + (0, n, n)),
    )


_REGISTRY: dict[str, Callable[[], MechanicalSystem]] = {
    "particle": lambda: nonholonomic_particle(True),
    "particle-free": lambda: nonholonomic_particle(False),
    "free": free_particle,
}


def register_system(name: str, factory: Callable[[], MechanicalSystem]) -> None:
    _REGISTRY[name] = factory


def available_systems() -> list[str]:
    return sorted(_REGISTRY)


def builtin_system(name: str) -> MechanicalSystem:
    """Look up a system by name.

    Besides registered names, ``"package.module:factory"`` imports and calls
    a zero-argument constructor, which is how user systems are plugged in.
    """
    if name in _REGISTRY:
        return _REGISTRY[name]()
    if ":" in name:
        module_name, _, attr = name.partition(":")
        try:
            factory = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigurationError(f"cannot import system constructor {name!r}: {exc}") from exc
        system = factory()
        if not isinstance(system, MechanicalSystem):
            raise ConfigurationError(f"{name!r} did not return a MechanicalSystem")
        return system
    raise ConfigurationError(
        f"unknown system {name!r}; available: {', '.join(available_systems())}"
    )
