import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routhkit import (
    DerivativeProvider,
    InconsistentConstraint,
    NoConvergence,
    NonFiniteEvaluation,
    SingularJacobian,
    antisymmetrize,
    constrained_lsq_solve,
    fd_gradient,
    kernel_basis,
    newton_solve,
)
from routhkit.numcore import one_form_exterior_derivative, two_form_closedness_defect
from routhkit.threebody import ThreeBodyParams, inertia_matrix, three_body_state


def test_fd_gradient_constant_field():
    assert np.allclose(fd_gradient(lambda x: 3.5, np.array([0.1, -2.0]), 1e-6), 0.0)


def test_fd_gradient_quadratic():
    # f(q, v) = v^2 / 2 at v = 2: central differences are exact for quadratics.
    grad = fd_gradient(lambda x: 0.5 * x[1] ** 2, np.array([0.0, 2.0]), 1e-6)
    assert abs(grad[1] - 2.0) < 1e-8
    assert abs(grad[0]) < 1e-8


def test_fd_gradient_three_body_against_hand_coded():
    # Oracle: gradient written out by hand from the rotor Lagrangian
    # L = I1 t'^2/2 + I2 (t'+p')^2/2 + I3 (t'+p'+s')^2/2 - cos(phi) - cos(psi),
    # in the internal (phi, psi, theta) ordering.
    i1, i2, i3 = 1.0, 2.0, 3.0
    x = three_body_state(0.0, 0.3, -0.2, 0.4, 0.1, 0.05)
    phi, psi, theta, dphi, dpsi, dtheta = x[0], x[1], x[2], x[3], x[4], x[5]

    def lag(y):
        t, p, s = y[5], y[3], y[4]
        return (0.5 * i1 * t**2 + 0.5 * i2 * (t + p) ** 2 + 0.5 * i3 * (t + p + s) ** 2
                - np.cos(y[0]) - np.cos(y[1]))

    expected = np.array([
        np.sin(phi),
        np.sin(psi),
        0.0,
        i2 * (dtheta + dphi) + i3 * (dtheta + dphi + dpsi),
        i3 * (dtheta + dphi + dpsi),
        i1 * dtheta + i2 * (dtheta + dphi) + i3 * (dtheta + dphi + dpsi),
    ])
    assert np.max(np.abs(fd_gradient(lag, x, 1e-6) - expected)) < 1e-6


def test_fd_gradient_nonfinite():
    provider = DerivativeProvider(value=lambda x: np.nan if x[0] < 0 else x[0])
    with pytest.raises(NonFiniteEvaluation):
        provider.fd_gradient(np.array([0.0]))


def test_provider_rejects_bad_step():
    with pytest.raises(ValueError):
        DerivativeProvider(value=lambda x: 0.0, fd_step=0.0)


def test_provider_crosscheck():
    provider = DerivativeProvider(
        value=lambda x: float(np.sin(x[0]) * x[1]),
        exact_jacobian=lambda x: np.array([np.cos(x[0]) * x[1], np.sin(x[0])]),
    )
    assert provider.crosscheck(np.array([0.3, 1.2])) < 1e-9


def test_newton_affine_single_step():
    a = np.array([2.5, -1.0])
    root = newton_solve(lambda x: x - a, lambda x: np.eye(2), np.zeros(2))
    assert np.allclose(root, a)


def test_newton_cubic():
    root = newton_solve(lambda x: x**3 - 8.0, lambda x: np.atleast_2d(3 * x**2),
                        np.array([1.0]), tol=1e-12)
    assert abs(root[0] - 2.0) < 1e-12


def test_newton_three_body_momentum_equation():
    # Solve the momentum condition for the absolute-angle rate and compare
    # with the linear closed form (mu - (I2+I3) dphi - I3 dpsi) / (I1+I2+I3).
    params = ThreeBodyParams(1.0, 2.0, 3.0)
    w = inertia_matrix(params)
    mu, dphi, dpsi = 0.5, 0.1, 0.05

    def residual(t):
        return np.array([w[2] @ np.array([dphi, dpsi, t[0]]) - mu])

    def jac(t):
        return np.array([[w[2, 2]]])

    root = newton_solve(residual, jac, np.zeros(1), tol=1e-12)
    closed = (mu - (2.0 + 3.0) * dphi - 3.0 * dpsi) / 6.0
    assert abs(root[0] - closed) < 1e-12


def test_newton_idempotent_at_root():
    root = newton_solve(lambda x: np.array([np.cos(x[0]) - x[0]]),
                        lambda x: np.array([[-np.sin(x[0]) - 1.0]]),
                        np.array([0.7]), tol=1e-12)
    again = newton_solve(lambda x: np.array([np.cos(x[0]) - x[0]]),
                         lambda x: np.array([[-np.sin(x[0]) - 1.0]]),
                         root, tol=1e-12)
    assert np.max(np.abs(again - root)) < 1e-12


def test_newton_singular_jacobian():
    with pytest.raises(SingularJacobian):
        newton_solve(lambda x: x**2 + 1.0, lambda x: np.atleast_2d(0.0 * x),
                     np.array([1.0]))


def test_newton_no_convergence_reports_residual():
    with pytest.raises(NoConvergence) as err:
        newton_solve(lambda x: np.array([np.exp(x[0])]),
                     lambda x: np.array([[np.exp(x[0])]]),
                     np.array([0.0]), max_iter=5)
    assert err.value.residual_norm is not None and err.value.residual_norm > 0


def test_constrained_lsq_zero_form():
    res = constrained_lsq_solve(np.zeros((2, 2)), np.zeros(2))
    assert res.consistent
    assert np.allclose(res.solution, 0.0)
    assert res.kernel.shape == (2, 2)


def test_constrained_lsq_symplectic_block():
    # Direct inversion oracle: [[0, 1], [-1, 0]] x = (1, 0) has the unique
    # solution (0, 1).
    m = np.array([[0.0, 1.0], [-1.0, 0.0]])
    b = np.array([1.0, 0.0])
    expected = np.linalg.solve(m, b)
    assert np.allclose(expected, [0.0, 1.0])
    res = constrained_lsq_solve(m, b)
    assert res.consistent
    assert np.allclose(res.solution, expected, atol=1e-12)
    assert res.kernel.shape[1] == 0


def test_constrained_lsq_intermediate_kernel_dimension(setup123, rng):
    # Brute-force SVD oracle on the assembled matrix at random states: the
    # momentum-reduced intermediate stage has exactly one null direction,
    # the group translation slot.
    from routhkit import presymplectic_matrix, routh_reduce

    rr = routh_reduce(setup123.system, setup123.action, [0.5],
                      setup123.mechanical_connection)
    for _ in range(10):
        s = rng.uniform(-1.0, 1.0, 5)
        omega = presymplectic_matrix(rr.intermediate, s)
        sv = np.linalg.svd(omega, compute_uv=False)
        assert np.sum(sv < 1e-10 * sv[0]) == 1
        ker = kernel_basis(omega)
        assert ker.shape[1] == 1
        assert abs(abs(ker[4, 0]) - 1.0) < 1e-12  # the group slot


def test_constrained_lsq_fixed_assignment():
    m = np.array([[0.0, 1.0], [-1.0, 0.0]])
    res = constrained_lsq_solve(m, np.array([1.0, 0.0]), fixed={1: 1.0})
    assert np.allclose(res.solution, [0.0, 1.0])
    with pytest.raises(InconsistentConstraint):
        constrained_lsq_solve(m, np.array([1.0, 0.0]), fixed={1: 2.0})


def test_constrained_lsq_inconsistent_rhs():
    # Rank-2 form in 3d: a right-hand side with a kernel component is
    # flagged, and the returned residual matches the projection gap.
    m = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    res = constrained_lsq_solve(m, np.array([0.0, 0.0, 1.0]))
    assert not res.consistent


def test_constrained_lsq_rejects_nonantisymmetric():
    with pytest.raises(ValueError):
        constrained_lsq_solve(np.eye(2), np.zeros(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_antisymmetric_pairing_is_exact(dim, seed):
    # Integer-valued entries make the float arithmetic exact, so the
    # pairing identity holds with zero tolerance.
    gen = np.random.default_rng(seed)
    m = antisymmetrize(gen.integers(-8, 8, size=(dim, dim)).astype(float) * 2.0)
    x = gen.integers(-4, 4, size=dim).astype(float)
    y = gen.integers(-4, 4, size=dim).astype(float)
    assert float(x @ m @ y) == -float(y @ m @ x)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_consistent_solution_residual_bound(dim, seed):
    gen = np.random.default_rng(seed)
    m = antisymmetrize(gen.normal(size=(dim, dim)))
    b = m @ gen.normal(size=dim)  # guaranteed in the range
    res = constrained_lsq_solve(m, b)
    assert res.consistent
    assert np.max(np.abs(m @ res.solution - b)) < 1e-8 * (1.0 + np.max(np.abs(b)))


def test_kernel_basis_orthonormal():
    m = np.zeros((4, 4))
    m[0, 1] = 1.0
    m[1, 0] = -1.0
    ker = kernel_basis(m)
    assert ker.shape == (4, 2)
    assert np.allclose(ker.T @ ker, np.eye(2))
    assert np.allclose(m @ ker, 0.0)


def test_one_form_exterior_derivative_matches_closed_form():
    # gamma = x1 dx0 has d(gamma) = dx1 ^ dx0, i.e. entry (1, 0) = +1.
    def coeffs(x):
        return np.array([x[1], 0.0])

    d = one_form_exterior_derivative(coeffs, np.array([0.3, -0.7]), 1e-6)
    assert abs(d[1, 0] - 1.0) < 1e-9
    assert abs(d[0, 1] + 1.0) < 1e-9


def test_two_form_closedness_defect():
    # Constant forms are closed; a form with entries linear in a third
    # coordinate fails the cyclic identity.
    const = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert two_form_closedness_defect(lambda x: const, np.zeros(3), 1e-5) < 1e-12

    def open_form(x):
        m = np.zeros((3, 3))
        m[0, 1] = x[2]
        m[1, 0] = -x[2]
        return m

    assert two_form_closedness_defect(open_form, np.zeros(3), 1e-5) > 0.5
