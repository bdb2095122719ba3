"""Nonholonomic integrators built from discrete generating functions."""
from .continuous import (
    Trajectory,
    check_initial_data,
    force_oneform,
    multipliers,
    nonholonomic_field,
    reference_trajectory,
    rk4_flow,
    rk4_integrate,
    rk4_step,
)
from .errors import (
    CompatibilityError,
    ConfigurationError,
    InconsistentInitialDataError,
    NhintError,
    NonConvergenceError,
    SolvabilityError,
    StepFailure,
)
from .harness import OrderReport, RunConfig, compare, fit_order, order_estimate, read_csv, run, write_csv
from .identities import IdentityReport, random_admissible_states, shoot, verify_exact_identities
from .schemes import (
    ProjectorPair,
    Scheme,
    discrete_constraint,
    discrete_legendre,
    force_weights,
    projectors,
    s_alpha,
    s_alpha_grads,
)
from .steppers import (
    METHODS,
    NewtonResult,
    SolverConfig,
    StepRecord,
    dla_step,
    gfni_step,
    initial_step,
    integrate,
    newton_solve,
    nondegeneracy_det,
    nondegeneracy_matrix,
    preserving_step,
)
from .systems import (
    MechanicalSystem,
    PhasePoint,
    TangentState,
    available_systems,
    builtin_system,
    constraint_gram,
    constraint_value,
    energy,
    free_particle,
    inverse_legendre,
    lagrangian,
    legendre,
    momentum_constraint,
    nonholonomic_particle,
    register_system,
    validate_system,
    without_constraints,
)

__version__ = "0.1.0"
