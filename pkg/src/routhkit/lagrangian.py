"""Magnetic Lagrangian systems on fiber products.

A system lives on the fiber product of a tangent bundle with a taller
configuration bundle: states are ``(q, v, p)`` where ``q`` are base
coordinates, ``v`` the base velocities and ``p`` the extra fiber
coordinates.  State vectors are flat arrays ordered ``q[0:n), v[n:2n),
p[2n:2n+k)``; configuration points on the tall space are ``(q, p)``.

The closed 2-form driving the dynamics is assembled pointwise as an
antisymmetric matrix over the state coordinates.  Writing ``C[i, j] =
d2L/dq_j dv_i``, ``W[i, j] = d2L/dv_j dv_i`` and ``D[i, a] = d2L/dp_a dv_i``,
its blocks are::

    form(dq_k, dq_l) = C[l, k] - C[k, l] + B[k, l]
    form(dv_k, dq_l) = W[l, k]
    form(dq_l, dp_b) = -D[l, b] + B[l, b]
    form(dp_a, dp_b) = B[a, b]

with all velocity-velocity and velocity-fiber slots zero, where ``B`` is
the magnetic 2-form on the tall configuration space.  With the convention
of :mod:`routhkit.numcore`, a curve solves the Euler-Lagrange equations iff
``form_matrix @ xdot = dE`` at every point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numcore
from .errors import (
    AmbiguousDynamics,
    InconsistentConstraint,
    InconsistentDynamics,
    NonFiniteEvaluation,
    TooShortTrajectory,
)
from .numcore import DerivativeProvider, antisymmetrize, as_point


@dataclass(frozen=True)
class BundleDims:
    """Dimensions fixing the adapted-coordinate layout.

    ``n`` is the base dimension, ``k`` the number of extra fiber
    coordinates on the tall configuration space.
    """

    n: int
    k: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k < 0:
            raise ValueError(f"need n >= 1 and k >= 0, got n={self.n}, k={self.k}")

    @property
    def state_dim(self) -> int:
        return 2 * self.n + self.k

    @property
    def config_dim(self) -> int:
        return self.n + self.k


@dataclass(frozen=True)
class StateTPQ:
    """A state ``(q, v, p)``; mainly a construction convenience."""

    q: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", as_point(self.q))
        object.__setattr__(self, "v", as_point(self.v))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(-1))
        if self.q.size != self.v.size:
            raise ValueError("q and v must have the same length")
        for name in ("q", "v", "p"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def array(self) -> np.ndarray:
        return np.concatenate([self.q, self.v, self.p])

    @classmethod
    def from_array(cls, dims: BundleDims, x) -> "StateTPQ":
        x = as_point(x)
        if x.size != dims.state_dim:
            raise ValueError(f"state length {x.size} does not match dims {dims}")
        n = dims.n
        return cls(q=x[:n], v=x[n:2 * n], p=x[2 * n:])


def as_state_array(dims: BundleDims, s) -> np.ndarray:
    x = s.array if isinstance(s, StateTPQ) else as_point(s)
    if x.size != dims.state_dim:
        raise ValueError(f"state length {x.size} does not match dims {dims}")
    return x


@dataclass
class MagneticLagrangianSystem:
    """A Lagrangian on the fiber product plus a closed magnetic 2-form.

    ``magnetic_form`` maps a configuration point ``(q, p)`` to an
    antisymmetric ``(n+k, n+k)`` matrix; ``None`` means zero.  Closedness is
    a validated property (see :func:`magnetic_closedness_defect`), not an
    enforced construction.  ``periodic_coords`` lists configuration indices
    identified modulo 2*pi; comparisons, never chart transitions, use it.
    """

    dims: BundleDims
    lagrangian: DerivativeProvider
    magnetic_form: Callable[[np.ndarray], np.ndarray] | None = None
    periodic_coords: frozenset[int] = frozenset()
    name: str = ""
    # Optional fast hook: x -> (velocity Hessian, mixed q/v Hessian block,
    # base gradient, magnetic base block or None).  Used by the gauge-fixed
    # solve on systems without extra fibers; must agree with the provider
    # (cross-validated in the test suite).
    el_terms: Callable[[np.ndarray], tuple] | None = None

    def config_point(self, s) -> np.ndarray:
        x = as_state_array(self.dims, s)
        n = self.dims.n
        return np.concatenate([x[:n], x[2 * n:]])

    def magnetic_matrix(self, config_point) -> np.ndarray:
        d = self.dims.config_dim
        if self.magnetic_form is None:
            return np.zeros((d, d))
        mat = antisymmetrize(self.magnetic_form(as_point(config_point)))
        if mat.shape != (d, d):
            raise ValueError(f"magnetic form has shape {mat.shape}, expected ({d}, {d})")
        return mat


def fiber_derivative(sys: MagneticLagrangianSystem, s) -> np.ndarray:
    """Velocity gradient of the Lagrangian (the Legendre map's covector)."""
    x = as_state_array(sys.dims, s)
    n = sys.dims.n
    alpha = sys.lagrangian.gradient(x)[n:2 * n]
    if not np.isfinite(alpha).all():
        raise NonFiniteEvaluation("fiber derivative evaluated to a non-finite value")
    return alpha


def energy(sys: MagneticLagrangianSystem, s) -> float:
    x = as_state_array(sys.dims, s)
    n = sys.dims.n
    return float(x[n:2 * n] @ fiber_derivative(sys, x) - sys.lagrangian(x))


def energy_differential(sys: MagneticLagrangianSystem, s) -> np.ndarray:
    """Differential of the energy over all state coordinates."""
    x = as_state_array(sys.dims, s)
    n = sys.dims.n
    v = x[n:2 * n]
    grad = sys.lagrangian.gradient(x)
    hess = sys.lagrangian.hessian(x)
    de = hess[n:2 * n, :].T @ v - grad
    de[n:2 * n] += grad[n:2 * n]
    return de


def presymplectic_matrix(sys: MagneticLagrangianSystem, s) -> np.ndarray:
    """Matrix of the magnetic Poincare-Cartan 2-form at a state."""
    x = as_state_array(sys.dims, s)
    n, k = sys.dims.n, sys.dims.k
    hess = sys.lagrangian.hessian(x)
    c = hess[n:2 * n, :n]          # c[i, j] = d2L/dq_j dv_i
    w = hess[n:2 * n, n:2 * n]
    d_blk = hess[n:2 * n, 2 * n:]  # d_blk[i, a] = d2L/dp_a dv_i
    b = sys.magnetic_matrix(sys.config_point(x))

    dim = sys.dims.state_dim
    m = np.zeros((dim, dim))
    m[:n, :n] = c.T - c + b[:n, :n]
    m[n:2 * n, :n] = w
    m[:n, n:2 * n] = -w
    if k:
        qp = -d_blk + b[:n, n:]
        m[:n, 2 * n:] = qp
        m[2 * n:, :n] = -qp.T
        m[2 * n:, 2 * n:] = b[n:, n:]
    return m


def _small_solve(a: np.ndarray, b: np.ndarray):
    """Direct solve with closed forms up to 3x3; None when singular."""
    n = a.shape[0]
    if n == 1:
        return b / a[0, 0] if a[0, 0] != 0.0 else None
    if n == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        if det == 0.0:
            return None
        return np.array([(a[1, 1] * b[0] - a[0, 1] * b[1]) / det,
                         (a[0, 0] * b[1] - a[1, 0] * b[0]) / det])
    if n == 3:
        c00 = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
        c01 = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
        c02 = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
        det = a[0, 0] * c00 + a[0, 1] * c01 + a[0, 2] * c02
        if det == 0.0:
            return None
        c10 = a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]
        c11 = a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]
        c12 = a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]
        c20 = a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]
        c21 = a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]
        c22 = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        return np.array([
            (c00 * b[0] + c10 * b[1] + c20 * b[2]) / det,
            (c01 * b[0] + c11 * b[1] + c21 * b[2]) / det,
            (c02 * b[0] + c12 * b[1] + c22 * b[2]) / det,
        ])
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return None


def el_vector_field(sys: MagneticLagrangianSystem, s, require_unique: bool = False):
    """Solve the contraction equation with the second-order gauge fixed.

    The base components of the result are pinned to the state's velocities;
    among the remaining freedom the minimum-norm representative is returned,
    together with the dimension of the residual gauge.  With
    ``require_unique`` a nonzero gauge raises ``AmbiguousDynamics``.
    """
    x = as_state_array(sys.dims, s)
    n, k = sys.dims.n, sys.dims.k
    v = x[n:2 * n]

    if k == 0:
        # Nondegenerate shortcut: with the base slots pinned the system
        # collapses to a square solve against the velocity Hessian.
        if sys.el_terms is not None:
            w, c, grad_q, b = sys.el_terms(x)
            rhs = grad_q - c @ v
            if b is not None:
                rhs = rhs + b @ v
        else:
            hess = sys.lagrangian.hessian(x)
            w = hess[n:2 * n, n:2 * n]
            c = hess[n:2 * n, :n]
            rhs = sys.lagrangian.gradient(x)[:n] - c @ v
            if sys.magnetic_form is not None:
                rhs = rhs + sys.magnetic_matrix(sys.config_point(x)) @ v
        vdot = _small_solve(w, rhs)
        if vdot is not None and np.isfinite(vdot).all():
            out = np.empty(2 * n)
            out[:n] = v
            out[n:] = vdot
            return out, 0
        # degenerate velocity Hessian: fall through to the kernel-aware path

    m = presymplectic_matrix(sys, x)
    de = energy_differential(sys, x)
    fixed = {i: float(v[i]) for i in range(n)}
    try:
        res = numcore.constrained_lsq_solve(m, de, fixed)
    except InconsistentConstraint as exc:
        raise InconsistentDynamics(str(exc)) from exc
    if not res.consistent:
        raise InconsistentDynamics(
            "energy differential does not annihilate the form kernel at this state"
        )
    kernel_dim = res.gauge_kernel.shape[1]
    if require_unique and kernel_dim:
        raise AmbiguousDynamics(
            f"dynamics undetermined in {kernel_dim} gauge direction(s)",
            kernel=res.gauge_kernel,
        )
    xdot = res.solution
    xdot[:n] = v
    return xdot, kernel_dim


@dataclass
class ResidualReport:
    """Per-sample Euler-Lagrange residuals of a trajectory."""

    times: np.ndarray
    values: np.ndarray
    max_residual: float


def el_residual(sys: MagneticLagrangianSystem, traj) -> ResidualReport:
    """Euler-Lagrange residuals along a trajectory.

    The time derivative comes from the fourth-order five-point central
    stencil, so only interior samples are scored.
    """
    times = np.asarray(traj.times, dtype=float)
    states = np.asarray(traj.states, dtype=float)
    if states.shape[0] < 5:
        raise TooShortTrajectory("need at least 5 samples for the stencil")
    h = times[1] - times[0]
    if np.max(np.abs(np.diff(times) - h)) > 1e-12 * max(1.0, abs(h)):
        raise ValueError("trajectory time steps are not uniform")

    deriv = (states[:-4] - 8.0 * states[1:-3] + 8.0 * states[3:-1] - states[4:]) / (12.0 * h)
    inner = states[2:-2]
    values = np.empty(inner.shape[0])
    for i, (x, xdot) in enumerate(zip(inner, deriv)):
        m = presymplectic_matrix(sys, x)
        de = energy_differential(sys, x)
        values[i] = float(np.max(np.abs(m @ xdot - de)))
    return ResidualReport(times=times[2:-2], values=values,
                          max_residual=float(np.max(values)))


@dataclass
class RegularityReport:
    """Pointwise regularity diagnostics at the probe states."""

    hessian_conditions: np.ndarray
    hessian_invertible: np.ndarray
    form_kernel_dims: np.ndarray
    form_nondegenerate: np.ndarray

    @property
    def hyperregular(self) -> bool:
        return bool(np.all(self.hessian_invertible) and np.all(self.form_nondegenerate))


def check_hyperregular(sys: MagneticLagrangianSystem, probes: Sequence) -> RegularityReport:
    """Report velocity-Hessian and 2-form nondegeneracy at each probe."""
    probes = list(probes)
    if not probes:
        raise ValueError("need at least one probe state")
    n = sys.dims.n
    conds, invert, kdims, nondeg = [], [], [], []
    for s in probes:
        x = as_state_array(sys.dims, s)
        w = sys.lagrangian.hessian(x)[n:2 * n, n:2 * n]
        sv = np.linalg.svd(w, compute_uv=False)
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        conds.append(cond)
        invert.append(sv[-1] > numcore.KERNEL_RTOL * max(sv[0], 1.0))
        m = presymplectic_matrix(sys, x)
        kdim = numcore.kernel_basis(m).shape[1]
        kdims.append(kdim)
        nondeg.append(kdim == 0)
    return RegularityReport(
        hessian_conditions=np.array(conds),
        hessian_invertible=np.array(invert, dtype=bool),
        form_kernel_dims=np.array(kdims, dtype=int),
        form_nondegenerate=np.array(nondeg, dtype=bool),
    )


def magnetic_closedness_defect(sys: MagneticLagrangianSystem, probes: Sequence,
                               step: float = 1e-6) -> float:
    """Max finite-difference exterior-derivative entry of the magnetic form."""
    if sys.magnetic_form is None:
        return 0.0
    worst = 0.0
    for p in probes:
        worst = max(worst, numcore.two_form_closedness_defect(
            lambda y: sys.magnetic_matrix(y), as_point(p), step))
    return worst
