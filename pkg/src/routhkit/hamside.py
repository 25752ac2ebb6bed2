"""Magnetic Hamiltonian systems and the cotangent-side transformation.

Deliberately thin: definitions, the explicit momentum transformation law,
its pullback identity and the classical momentum-shift construction.
States are flat arrays ordered ``(q[0:n), alpha[n:2n), p[2n:2n+k))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numcore
from .lagrangian import BundleDims
from .numcore import DerivativeProvider, antisymmetrize, as_point
from .presym import solve_presymplectic
from .symmetry import Connection, GroupAction
from .transform import MomentumTarget, TransformationPair, induced_magnetic_form


@dataclass(frozen=True)
class CovStateTPQ:
    """A cotangent-side state ``(q, alpha, p)``."""

    q: np.ndarray
    alpha: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", as_point(self.q))
        object.__setattr__(self, "alpha", as_point(self.alpha))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(-1))
        if self.q.size != self.alpha.size:
            raise ValueError("q and alpha must have the same length")

    @property
    def array(self) -> np.ndarray:
        return np.concatenate([self.q, self.alpha, self.p])


@dataclass
class MagneticHamiltonianSystem:
    """A Hamiltonian on the covector fiber product plus a magnetic form."""

    dims: BundleDims
    hamiltonian: DerivativeProvider
    magnetic_form: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def config_point(self, s) -> np.ndarray:
        x = _as_cov_array(self.dims, s)
        n = self.dims.n
        return np.concatenate([x[:n], x[2 * n:]])

    def magnetic_matrix(self, config_point) -> np.ndarray:
        d = self.dims.config_dim
        if self.magnetic_form is None:
            return np.zeros((d, d))
        return antisymmetrize(self.magnetic_form(as_point(config_point)))


def _as_cov_array(dims: BundleDims, s) -> np.ndarray:
    x = s.array if isinstance(s, CovStateTPQ) else as_point(s)
    if x.size != dims.state_dim:
        raise ValueError(f"state length {x.size} does not match dims {dims}")
    return x


def ham_presymplectic_matrix(sys: MagneticHamiltonianSystem, s) -> np.ndarray:
    """Canonical block plus the magnetic contribution, constant in alpha."""
    x = _as_cov_array(sys.dims, s)
    n, k = sys.dims.n, sys.dims.k
    b = sys.magnetic_matrix(sys.config_point(x))
    dim = sys.dims.state_dim
    m = np.zeros((dim, dim))
    m[:n, :n] = b[:n, :n]
    m[n:2 * n, :n] = np.eye(n)
    m[:n, n:2 * n] = -np.eye(n)
    if k:
        m[:n, 2 * n:] = b[:n, n:]
        m[2 * n:, :n] = -b[:n, n:].T
        m[2 * n:, 2 * n:] = b[n:, n:]
    return m


def hamiltonian_vector_field(sys: MagneticHamiltonianSystem, s,
                             require_solution: bool = True):
    """Solve the contraction equation for the Hamiltonian; no gauge is
    fixed on the cotangent side, ambiguity is simply reported."""
    x = _as_cov_array(sys.dims, s)
    omega = ham_presymplectic_matrix(sys, x)
    dh = sys.hamiltonian.gradient(x)
    solution, data = solve_presymplectic(omega, dh, require_solution=require_solution)
    return solution, data


def apply_cotangent_transformation(pair: TransformationPair, conn: Connection,
                                   target: MomentumTarget, s1) -> np.ndarray:
    """Explicit momentum transformation law; no implicit solve.

    Downstairs ``(q, alpha, qbar, pbar, pfib)`` maps to upstairs base
    momenta ``alpha + gamma^T target`` and fiber momenta equal to the
    target values.
    """
    x1 = _as_cov_array(pair.dims1, s1)
    n1, n2 = pair.n1, pair.n2
    q = x1[:n1]
    alpha = x1[n1:2 * n1]
    fiber = x1[2 * n1:]
    qbar = fiber[:pair.k_f]
    pbar = fiber[pair.k_f:pair.k_f + pair.k2]

    p1 = np.concatenate([q, fiber])
    beta = target(p1)
    gamma = conn.coefficients(p1[:n2])
    alpha_up = alpha + gamma.T @ beta
    return np.concatenate([q, qbar, alpha_up, beta, pbar])


def cotangent_transformation_jacobian(pair: TransformationPair, conn: Connection,
                                      target: MomentumTarget, s1) -> np.ndarray:
    """Exact tangent map of the cotangent transformation (affine in alpha)."""
    x1 = _as_cov_array(pair.dims1, s1)
    n1, n2, kf, k2 = pair.n1, pair.n2, pair.k_f, pair.k2
    d1 = pair.dims1.state_dim
    d2 = pair.dims2.state_dim
    q = x1[:n1]
    fiber = x1[2 * n1:]
    p1 = np.concatenate([q, fiber])
    beta = target(p1)
    gamma = conn.coefficients(p1[:n2])
    dbeta = target.jacobian_matrix(p1)        # (k_f, n1 + k1)
    dgam = conn.coefficients_jacobian(p1[:n2])  # (k_f, n1, n2)

    # Configuration slots of the downstairs state, in tall-point order.
    config_cols = np.array(list(range(n1)) + list(range(2 * n1, d1)))

    jac = np.zeros((d2, d1))
    jac[np.arange(n1), np.arange(n1)] = 1.0                      # q
    jac[n1 + np.arange(kf), 2 * n1 + np.arange(kf)] = 1.0        # qbar
    if k2:
        jac[2 * n2 + np.arange(k2), 2 * n1 + kf + np.arange(k2)] = 1.0  # pbar

    # Base momenta rows: alpha + gamma^T beta.
    rows = n2 + np.arange(n1)
    jac[rows, n1 + np.arange(n1)] = 1.0
    coupling = gamma.T @ dbeta                                    # (n1, n1 + k1)
    if kf:
        # gamma varies over the first n2 tall coordinates.
        dgb = np.einsum("aij,a->ij", dgam, beta)                  # (n1, n2)
        coupling[:, :n2] += dgb
    jac[np.ix_(rows, config_cols)] += coupling

    # Fiber momenta rows: the target values.
    rows = n2 + n1 + np.arange(kf)
    jac[np.ix_(rows, config_cols)] = dbeta
    return jac


def verify_ham_pullback(pair: TransformationPair, conn: Connection,
                        target: MomentumTarget,
                        upstairs: MagneticHamiltonianSystem,
                        probes: Sequence) -> np.ndarray:
    """Pointwise pullback defect of the cotangent 2-forms.

    The downstairs magnetic form is the embedded upstairs one plus the
    exterior derivative of the paired connection form, exactly as on the
    Lagrangian side.
    """
    from .transform import CompatibleTransformation  # magnetic-form helper reuse
    from .lagrangian import MagneticLagrangianSystem

    shim = CompatibleTransformation(
        pair=pair,
        source=MagneticLagrangianSystem(
            dims=pair.dims2,
            lagrangian=DerivativeProvider(value=lambda x: 0.0),
            magnetic_form=upstairs.magnetic_form,
        ),
        target=target,
        connection=conn,
    )
    down_form = induced_magnetic_form(shim)
    downstairs = MagneticHamiltonianSystem(dims=pair.dims1,
                                           hamiltonian=DerivativeProvider(value=lambda x: 0.0),
                                           magnetic_form=down_form)
    violations = []
    for s in probes:
        x1 = _as_cov_array(pair.dims1, s)
        x2 = apply_cotangent_transformation(pair, conn, target, x1)
        jac = cotangent_transformation_jacobian(pair, conn, target, x1)
        omega2 = ham_presymplectic_matrix(upstairs, x2)
        omega1 = ham_presymplectic_matrix(downstairs, x1)
        violations.append(float(np.max(np.abs(jac.T @ omega2 @ jac - omega1))))
    return np.array(violations)


def cotangent_momentum(action: GroupAction, q, alpha) -> np.ndarray:
    """Momentum map of the cotangent-lifted action: pair with generators."""
    sigma = action.generator_matrix(as_point(q))
    return sigma.T @ as_point(alpha)


@dataclass
class MomentumShiftReport:
    shifted_momenta: np.ndarray
    round_trip_defects: np.ndarray

    @property
    def max_shifted_momentum(self) -> float:
        return float(np.max(np.abs(self.shifted_momenta)))

    @property
    def max_round_trip_defect(self) -> float:
        return float(np.max(self.round_trip_defects))


def momentum_shift_check(ham: MagneticHamiltonianSystem, action: GroupAction,
                         mu, conn: Connection, probes: Sequence,
                         target: MomentumTarget | None = None) -> MomentumShiftReport:
    """Check the shift-by-connection identification of momentum levels.

    Probes are cotangent states on the level set.  The shift subtracts the
    contracted connection form; its image must sit on the zero level, and
    the cotangent transformation must invert it on the samples.
    """
    from .symmetry import connection_one_form_mu
    from .transform import momentum_target_from_level

    n = ham.dims.n
    g = action.g_dim
    if target is None:
        target = momentum_target_from_level(action, mu)
    pair = TransformationPair(dims1=BundleDims(n - g, g), dims2=ham.dims,
                              k_f=g, k_F=0)
    shifted, round_trip = [], []
    for s in probes:
        x = _as_cov_array(ham.dims, s)
        q, alpha = x[:n], x[n:2 * n]
        covector, _ = connection_one_form_mu(conn, mu, q, action=action)
        alpha_shift = alpha - covector
        shifted.append(cotangent_momentum(action, q, alpha_shift))
        # The zero level drops to the quotient-base covector state.
        down = np.concatenate([q[:n - g], alpha_shift[:n - g], q[n - g:]])
        back = apply_cotangent_transformation(pair, conn, target, down)
        up = np.concatenate([q, alpha])
        round_trip.append(float(np.max(np.abs(back - up))))
    return MomentumShiftReport(shifted_momenta=np.array(shifted),
                               round_trip_defects=np.array(round_trip))
