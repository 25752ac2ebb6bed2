import numpy as np
import pytest

from routhkit import (
    AmbiguousDynamics,
    BundleDims,
    DerivativeProvider,
    InconsistentDynamics,
    MagneticLagrangianSystem,
    StateTPQ,
    TooShortTrajectory,
    Trajectory,
    check_hyperregular,
    el_residual,
    el_vector_field,
    energy,
    energy_differential,
    fiber_derivative,
    integrate_rk4,
    magnetic_closedness_defect,
    presymplectic_matrix,
)
from routhkit.numcore import fd_jacobian
from routhkit.threebody import (
    ThreeBodyParams,
    build_three_body,
    inertia_matrix,
    normal_form_accelerations,
    three_body_state,
)


def free_particle(n=2):
    return MagneticLagrangianSystem(
        dims=BundleDims(n=n, k=0),
        lagrangian=DerivativeProvider(
            value=lambda x: float(0.5 * x[n:] @ x[n:]),
            exact_jacobian=lambda x: np.concatenate([np.zeros(n), x[n:]]),
            exact_hessian=lambda x: np.block([
                [np.zeros((n, n)), np.zeros((n, n))],
                [np.zeros((n, n)), np.eye(n)],
            ]),
        ),
    )


def test_bundle_dims_validation():
    with pytest.raises(ValueError):
        BundleDims(0, 0)
    with pytest.raises(ValueError):
        BundleDims(2, -1)
    assert BundleDims(2, 1).state_dim == 5


def test_state_roundtrip():
    s = StateTPQ(q=[0.1, 0.2], v=[1.0, -1.0], p=[3.0])
    dims = BundleDims(2, 1)
    assert np.allclose(StateTPQ.from_array(dims, s.array).array, s.array)
    with pytest.raises(ValueError):
        StateTPQ(q=[np.nan], v=[0.0], p=[])


def test_fiber_derivative_euclidean():
    sys = free_particle(3)
    v = np.array([0.3, -1.0, 2.0])
    s = np.concatenate([np.zeros(3), v])
    assert np.allclose(fiber_derivative(sys, s), v)


def test_fiber_derivative_three_body(setup123):
    # d L / d theta' at unit absolute rate is the total inertia.
    s = three_body_state(0.0, 0.0, 0.0, 1.0, 0.0, 0.0)
    alpha = fiber_derivative(setup123.system, s)
    assert abs(alpha[2] - 6.0) < 1e-12  # theta slot, I1+I2+I3
    assert np.allclose(alpha, inertia_matrix(setup123.params)[:, 2], atol=1e-12)


def test_fiber_derivative_intermediate_matches_fd(setup123, rng):
    from routhkit import routh_reduce

    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    for _ in range(5):
        s = rng.uniform(-1, 1, 5)
        exact = fiber_derivative(rr.intermediate, s)
        fd = rr.intermediate.lagrangian.fd_gradient(s)[2:4]
        assert np.max(np.abs(exact - fd)) < 1e-6


def test_energy_mechanical():
    # L = |v|^2/2 - V(q) gives E = |v|^2/2 + V(q).
    n = 2
    sys = MagneticLagrangianSystem(
        dims=BundleDims(n, 0),
        lagrangian=DerivativeProvider(
            value=lambda x: float(0.5 * x[n:] @ x[n:] - np.cos(x[0]))),
    )
    s = np.array([0.4, 0.0, 1.0, 2.0])
    assert abs(energy(sys, s) - (0.5 * 5.0 + np.cos(0.4))) < 1e-9


def test_energy_at_rest_is_potential(setup123):
    s = three_body_state(0.1, 0.3, -0.2, 0.0, 0.0, 0.0)
    assert abs(energy(setup123.system, s) - (np.cos(0.3) + np.cos(-0.2))) < 1e-12


def test_presymplectic_matrix_canonical():
    sys = free_particle(2)
    m = presymplectic_matrix(sys, np.zeros(4))
    expected = np.zeros((4, 4))
    expected[2:, :2] = np.eye(2)
    expected[:2, 2:] = -np.eye(2)
    assert np.allclose(m, expected)


def test_presymplectic_matrix_is_derivative_of_momentum_form(setup123, rng):
    # Oracle: the 2-form must equal the finite-difference exterior
    # derivative of the momentum 1-form (dL/dv_i) dq_i on all slots.
    sys = setup123.system

    def momentum_form(x):
        coeffs = np.zeros(6)
        coeffs[:3] = sys.lagrangian.gradient(x)[3:]
        return coeffs

    for _ in range(20):
        x = rng.uniform(-1, 1, 6)
        grad = fd_jacobian(momentum_form, x, 1e-6).T
        d_form = grad - grad.T
        assert np.max(np.abs(d_form - presymplectic_matrix(sys, x))) < 1e-5


def test_presymplectic_matrix_magnetic_block(setup123, rng):
    # With the non-flat connection the intermediate stage carries the
    # gyroscopic block mu*sin(psi) in the (phi, psi) slot of its magnetic
    # form.  Inside the full 2-form that block cancels against the exterior
    # derivative of the velocity-linear terms, which is exactly why every
    # connection produces the same dynamics.
    from routhkit import routh_reduce

    mu = 0.5
    rr = routh_reduce(setup123.system, setup123.action, [mu],
                      setup123.nonflat_connection)
    for _ in range(5):
        s = rng.uniform(-1, 1, 5)
        b = rr.intermediate.magnetic_matrix(rr.intermediate.config_point(s))
        assert abs(b[0, 1] - mu * np.sin(s[1])) < 1e-10
        m = presymplectic_matrix(rr.intermediate, s)
        assert abs(m[0, 1]) < 1e-10


def test_presymplectic_closedness(setup123, rng):
    from routhkit.numcore import two_form_closedness_defect
    from routhkit import routh_reduce

    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.nonflat_connection)
    for _ in range(3):
        s = rng.uniform(-0.5, 0.5, 5)
        defect = two_form_closedness_defect(
            lambda y: presymplectic_matrix(rr.intermediate, y), s, 1e-4)
        assert defect < 1e-4


def test_el_vector_field_free_particle():
    sys = free_particle(2)
    s = np.array([0.0, 1.0, 0.5, -0.5])
    xdot, kdim = el_vector_field(sys, s)
    assert kdim == 0
    assert np.allclose(xdot, [0.5, -0.5, 0.0, 0.0])


def test_el_vector_field_matches_normal_form(setup123, rng):
    for _ in range(20):
        s = rng.uniform(-np.pi, np.pi, 6)
        xdot, kdim = el_vector_field(setup123.system, s)
        assert kdim == 0
        assert np.allclose(xdot[:3], s[3:], rtol=0, atol=0)
        expected = normal_form_accelerations(setup123.params, s)
        assert np.max(np.abs(xdot[3:] - expected)) < 1e-8


def test_el_vector_field_fast_path_matches_generic(setup123, rng):
    # The block-restricted hook and the kernel-aware path must agree.
    bare = MagneticLagrangianSystem(
        dims=setup123.system.dims,
        lagrangian=setup123.system.lagrangian,
        periodic_coords=setup123.system.periodic_coords,
    )
    for _ in range(5):
        s = rng.uniform(-1, 1, 6)
        fast, _ = el_vector_field(setup123.system, s)
        slow, _ = el_vector_field(bare, s)
        assert np.max(np.abs(fast - slow)) < 1e-10


def test_el_vector_field_reduced_matches_mass_matrix_oracle(setup123, rng):
    # Hand-inverted 2x2 oracle for the reduced stage: accelerations equal
    # the constant mass matrix solved against the potential force.
    from routhkit import routh_reduce
    from routhkit.threebody import potential_gradient

    i1, i2, i3 = 1.0, 2.0, 3.0
    tot = i1 + i2 + i3
    mass = np.array([[i1 * (i2 + i3) / tot, i1 * i3 / tot],
                     [i1 * i3 / tot, i3 * (i1 + i2) / tot]])
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    for _ in range(5):
        s = rng.uniform(-1, 1, 4)
        xdot, _ = el_vector_field(rr.reduced, s)
        force = -potential_gradient(setup123.params, s[0], s[1])
        assert np.max(np.abs(xdot[2:] - np.linalg.solve(mass, force))) < 1e-10


def test_el_vector_field_ambiguous_and_inconsistent():
    # One fiber slot, no coupling: the kernel contains the fiber direction.
    # With a fiber-dependent potential the primary test fails; without it
    # the dynamics are consistent but undetermined in the fiber slot.
    def build(vp):
        return MagneticLagrangianSystem(
            dims=BundleDims(1, 1),
            lagrangian=DerivativeProvider(
                value=lambda x: float(0.5 * x[1] ** 2 - vp * np.cos(x[2]))),
        )

    free, coupled = build(0.0), build(1.0)
    s = np.array([0.0, 0.3, 1.0])
    xdot, kdim = el_vector_field(free, s)
    assert kdim == 1
    with pytest.raises(AmbiguousDynamics):
        el_vector_field(free, s, require_unique=True)
    with pytest.raises(InconsistentDynamics):
        el_vector_field(coupled, s)


def test_el_residual_constant_velocity():
    sys = free_particle(1)
    times = 0.01 * np.arange(20)
    states = np.stack([np.array([0.5 + t, 1.0]) for t in times])
    traj = Trajectory(times=times, states=states)
    report = el_residual(sys, traj)
    assert report.max_residual < 1e-10


def test_el_residual_rk4_trajectory(setup123):
    ic = three_body_state(0.0, 0.3, -0.2, 0.1, 0.1, 0.05)
    traj = integrate_rk4(setup123.system, ic, 1e-3, 0.5)
    report = el_residual(setup123.system, traj)
    assert report.max_residual < 1e-6


def test_el_residual_detects_perturbation(setup123):
    ic = three_body_state(0.0, 0.3, -0.2, 0.1, 0.1, 0.05)
    traj = integrate_rk4(setup123.system, ic, 1e-3, 0.1)
    states = traj.states.copy()
    states[50, 0] += 0.1
    bad = Trajectory(times=traj.times, states=states)
    report = el_residual(setup123.system, bad)
    assert report.max_residual > 1e-2


def test_el_residual_too_short(setup123):
    with pytest.raises(TooShortTrajectory):
        el_residual(setup123.system, Trajectory(
            times=np.arange(3) * 0.1, states=np.zeros((3, 6))))


def test_check_hyperregular_full(setup123, rng):
    probes = [rng.uniform(-1, 1, 6) for _ in range(5)]
    report = check_hyperregular(setup123.system, probes)
    assert report.hyperregular
    assert np.all(report.form_kernel_dims == 0)


def test_check_hyperregular_intermediate(setup123, rng):
    from routhkit import routh_reduce

    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    probes = [rng.uniform(-1, 1, 5) for _ in range(5)]
    report = check_hyperregular(rr.intermediate, probes)
    assert not report.hyperregular
    assert np.all(report.form_kernel_dims == 1)


def test_check_hyperregular_singular_hessian():
    # L = v1^2/2 on a 2d base: the velocity Hessian is singular.
    sys = MagneticLagrangianSystem(
        dims=BundleDims(2, 0),
        lagrangian=DerivativeProvider(value=lambda x: float(0.5 * x[2] ** 2)),
    )
    report = check_hyperregular(sys, [np.array([0.0, 0.0, 1.0, 1.0])])
    assert not report.hessian_invertible[0]
    assert np.isinf(report.hessian_conditions[0])


def test_energy_differential_matches_fd(setup123, rng):
    from routhkit.numcore import fd_gradient

    sys = setup123.system
    for _ in range(5):
        x = rng.uniform(-1, 1, 6)
        fd = fd_gradient(lambda y: energy(sys, y), x, 1e-6)
        assert np.max(np.abs(energy_differential(sys, x) - fd)) < 1e-6


def test_magnetic_closedness(setup123, rng):
    from routhkit import routh_reduce

    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.nonflat_connection)
    probes = [rng.uniform(-1, 1, 3) for _ in range(5)]
    assert magnetic_closedness_defect(rr.intermediate, probes) < 1e-5

    # Negative control: an open 2-form is caught.
    def open_form(p):
        m = np.zeros((3, 3))
        m[0, 1] = p[2]
        m[1, 0] = -p[2]
        return m

    bad = MagneticLagrangianSystem(dims=BundleDims(2, 1),
                                   lagrangian=setup123.system.lagrangian,
                                   magnetic_form=open_form)
    assert magnetic_closedness_defect(bad, probes) > 0.5
