"""Routh reduction of magnetic Lagrangian systems on fiber products.

The package realizes symmetry reduction in two steps: a compatible
transformation that solves the fiber velocities from a prescribed momentum
covector, followed by a fiberwise quotient of the leftover translation
symmetry.  Everything is verified numerically on a built-in system of three
coupled planar rotors.
"""

from .errors import (
    AmbiguousDynamics,
    ConfigError,
    InconsistentConstraint,
    InconsistentDynamics,
    NoConvergence,
    NonFiniteEvaluation,
    NotCompatiblePoints,
    NotFreeAction,
    NotInImage,
    NotInvariant,
    NotMechanical,
    NotReducible,
    RouthkitError,
    SingularJacobian,
    TooShortTrajectory,
)
from .numcore import (
    DerivativeProvider,
    antisymmetrize,
    constrained_lsq_solve,
    fd_gradient,
    fd_hessian,
    fd_jacobian,
    kernel_basis,
    newton_solve,
    one_form_exterior_derivative,
    two_form_closedness_defect,
)
from .lagrangian import (
    BundleDims,
    MagneticLagrangianSystem,
    StateTPQ,
    check_hyperregular,
    el_residual,
    el_vector_field,
    energy,
    energy_differential,
    fiber_derivative,
    magnetic_closedness_defect,
    presymplectic_matrix,
)
from .presym import (
    PRIMARY_CONSISTENT,
    SECONDARY_REQUIRED,
    UNRESOLVED,
    classify_constraint_points,
    related_vector_defect,
    solve_presymplectic,
)
from .symmetry import (
    BgPotential,
    Connection,
    GroupAction,
    check_g_regular,
    connection_one_form_mu,
    flat_connection,
    mechanical_connection,
    mechanical_connection_coefficients,
    momentum_map,
    translation_action,
    verify_bg_potential,
)
from .transform import (
    CompatibleTransformation,
    MomentumTarget,
    TransformationPair,
    apply_transformation,
    check_diffeomorphic,
    check_fiber_regular,
    constant_momentum_target,
    induced_system,
    momentum_target_from_level,
    transformation_jacobian,
    verify_pullback_identities,
    verify_tangency,
)
from .reduction import (
    FiberwiseAction,
    RouthResult,
    fiberwise_action,
    fiberwise_reduce,
    full_initial_condition,
    reconstruct,
    reduced_initial_condition,
    routh_reduce,
)
from .hamside import (
    CovStateTPQ,
    MagneticHamiltonianSystem,
    apply_cotangent_transformation,
    cotangent_momentum,
    ham_presymplectic_matrix,
    hamiltonian_vector_field,
    momentum_shift_check,
    verify_ham_pullback,
)
from .integrators import Trajectory, integrate_implicit_midpoint, integrate_rk4
from .threebody import (
    PotentialCoeffs,
    ThreeBodyParams,
    ThreeBodySetup,
    build_three_body,
    build_three_body_cotangent,
    momentum_value,
    normal_form_accelerations,
    three_body_state,
    velocity_from_momentum,
)
from .harness import (
    ScenarioResult,
    VerificationReport,
    run_scenario,
    write_report_json,
    write_trajectory_csv,
)

__version__ = "0.1.0"
