import numpy as np
import pytest

from routhkit import (
    BundleDims,
    DerivativeProvider,
    InconsistentDynamics,
    MagneticLagrangianSystem,
    NotCompatiblePoints,
    PRIMARY_CONSISTENT,
    SECONDARY_REQUIRED,
    classify_constraint_points,
    el_vector_field,
    energy_differential,
    presymplectic_matrix,
    related_vector_defect,
    routh_reduce,
    solve_presymplectic,
)
from routhkit.transform import TransformationPair, apply_transformation, transformation_jacobian


def test_solve_symplectic_unique():
    omega = np.array([[0.0, -1.0], [1.0, 0.0]])
    dh = np.array([0.3, 0.7])
    sol, data = solve_presymplectic(omega, dh)
    assert data.consistent
    assert data.kernel_basis.shape[1] == 0
    # i_X omega = -dh in matrix form: omega @ x = dh.
    assert np.allclose(omega @ sol, dh)


def test_solve_zero_form_inconsistent():
    sol, data = solve_presymplectic(np.zeros((2, 2)), np.array([1.0, 0.0]))
    assert not data.consistent
    with pytest.raises(InconsistentDynamics):
        solve_presymplectic(np.zeros((2, 2)), np.array([1.0, 0.0]),
                            require_solution=True)


def test_solve_intermediate_matches_reduced_field(setup123, rng):
    # The consistent part of the intermediate solve projects onto the
    # reduced dynamics.
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    for _ in range(5):
        s = rng.uniform(-1, 1, 5)
        omega = presymplectic_matrix(rr.intermediate, s)
        de = energy_differential(rr.intermediate, s)
        sol, data = solve_presymplectic(omega, de, gauge={0: s[2], 1: s[3]})
        assert data.consistent
        assert data.kernel_basis.shape[1] == 1
        reduced_field, _ = el_vector_field(rr.reduced, s[:4])
        assert np.max(np.abs(sol[:4] - reduced_field)) < 1e-9


def test_gauge_shift_leaves_residual_unchanged(setup123, rng):
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    s = rng.uniform(-1, 1, 5)
    omega = presymplectic_matrix(rr.intermediate, s)
    de = energy_differential(rr.intermediate, s)
    sol, data = solve_presymplectic(omega, de)
    base = np.max(np.abs(omega @ sol - de))
    shifted = sol + 3.7 * data.kernel_basis[:, 0]
    assert abs(np.max(np.abs(omega @ shifted - de)) - base) < 1e-12


def test_classify_hyperregular_all_primary(setup123, rng):
    states = [rng.uniform(-1, 1, 6) for _ in range(10)]
    report = classify_constraint_points(setup123.system, states)
    assert report.all_consistent
    assert report.modal_kernel_dim == 0
    assert report.final_constraint_like


def test_classify_intermediate_all_primary(setup123, rng):
    # The kernel is the group direction; invariance of the energy
    # annihilates it at every sampled state.
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    states = [rng.uniform(-1, 1, 5) for _ in range(100)]
    report = classify_constraint_points(rr.intermediate, states)
    assert report.all_consistent
    assert report.modal_kernel_dim == 1
    assert all(p.label == PRIMARY_CONSISTENT for p in report.points)


def test_classify_secondary_required():
    # Fiber-dependent potential with no fiber dynamics: the energy pairs
    # nontrivially with the kernel direction.
    sys = MagneticLagrangianSystem(
        dims=BundleDims(1, 1),
        lagrangian=DerivativeProvider(
            value=lambda x: float(0.5 * x[1] ** 2 - np.cos(x[2]))),
    )
    states = [np.array([0.0, 0.4, 1.0]), np.array([0.1, -0.2, 0.5])]
    report = classify_constraint_points(sys, states)
    assert not report.all_consistent
    assert all(p.label == SECONDARY_REQUIRED for p in report.points)


def test_related_vectors_tangent_map_images(setup123, rng):
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    ct = rr.transformation
    for _ in range(5):
        s1 = rng.uniform(-1, 1, 5)
        s2 = apply_transformation(ct, s1)
        y = rng.uniform(-1, 1, 5)
        x = transformation_jacobian(ct, s1) @ y
        ok, defect = related_vector_defect(ct.pair, s1, s2, y, x)
        assert ok and defect < 1e-12


def test_related_vectors_momentum_mismatch(setup123, rng):
    # The upstairs field off the momentum level drags the group-angle rate
    # away from the solved one, so the shared group slot of the vectors
    # disagrees by exactly the momentum offset over the locked inertia.
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    ct = rr.transformation
    s1 = rng.uniform(-1, 1, 5)
    s2 = apply_transformation(ct, s1)
    x_up, _ = el_vector_field(setup123.system, s2)
    y_down = ct.pair.compatible_down_vector(x_up)
    ok, defect = related_vector_defect(ct.pair, s1, s2, y_down, x_up)
    assert ok

    off_level = s2.copy()
    off_level[5] += 0.3  # break the momentum condition
    x_off, _ = el_vector_field(setup123.system, off_level)
    ok, defect = related_vector_defect(ct.pair, s1, s2, y_down, x_off)
    assert not ok
    assert abs(defect - 0.3) < 1e-10


def test_related_vectors_incompatible_base_points(setup123, rng):
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    ct = rr.transformation
    s1 = rng.uniform(-1, 1, 5)
    s2 = apply_transformation(ct, s1)
    s2_shifted = s2.copy()
    s2_shifted[0] += 0.2  # different base point
    with pytest.raises(NotCompatiblePoints):
        related_vector_defect(ct.pair, s1, s2_shifted, np.zeros(5), np.zeros(6))


def test_related_vectors_defect_reported(setup123, rng):
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    ct = rr.transformation
    s1 = rng.uniform(-1, 1, 5)
    s2 = apply_transformation(ct, s1)
    y = rng.uniform(-1, 1, 5)
    x = transformation_jacobian(ct, s1) @ y
    x[0] += 0.05
    ok, defect = related_vector_defect(ct.pair, s1, s2, y, x)
    assert not ok
    assert abs(defect - 0.05) < 1e-12


def test_f_related_solutions_solve_downstairs(setup123, rng):
    # Any vector field related through the transformation solves the
    # downstairs contraction equation: push downstairs solutions up and
    # check the upstairs residual of their preimages.
    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    ct = rr.transformation
    for _ in range(5):
        s1 = rng.uniform(-1, 1, 5)
        s2 = apply_transformation(ct, s1)
        x_up, _ = el_vector_field(setup123.system, s2)
        # The compatible downstairs vector determined by the upstairs field.
        y = ct.pair.compatible_down_vector(x_up)
        omega1 = presymplectic_matrix(rr.intermediate, s1)
        de1 = energy_differential(rr.intermediate, s1)
        assert np.max(np.abs(omega1 @ y - de1)) < 1e-8
