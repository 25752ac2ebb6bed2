"""Dense numerical substrate for the rest of the package.

Conventions, used everywhere and never repeated:

* points and states are 1-d float arrays;
* a 2-form at a point is the antisymmetric matrix ``m`` with
  ``m[i, j] = form(e_i, e_j)``, so a vector field ``x`` solves the
  contraction equation ``i_x form = -dh`` exactly when ``m @ x = dh``;
* all linear algebra is dense (desk-scale problems, dimension O(10)).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    InconsistentConstraint,
    NoConvergence,
    NonFiniteEvaluation,
    SingularJacobian,
)

# Kernel detection: antisymmetric matrices have paired singular values, so
# the rank cut must be relative to the largest one.
KERNEL_RTOL = 1e-10
CONSISTENCY_RTOL = 1e-9
RESIDUAL_RTOL = 1e-8


def as_point(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    return a if a.ndim == 1 else a.reshape(-1)


def _require_finite(value, what: str):
    if not np.isfinite(value).all():
        raise NonFiniteEvaluation(f"{what} evaluated to a non-finite value")
    return value


@dataclass
class DerivativeProvider:
    """A scalar or vector field together with optional exact derivatives.

    ``value`` maps a point to a float (scalar field) or a 1-d array (vector
    field).  When an exact callback is absent, derivatives fall back to
    central finite differences: step ``fd_step`` for first derivatives and
    ``sqrt(fd_step)`` for second differences, whose rounding floor makes the
    first-order step far too small.  Exact callbacks are trusted in hot
    loops; the finite-difference paths validate every evaluation.
    """

    value: Callable[[np.ndarray], float | np.ndarray]
    exact_jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    exact_hessian: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-6

    def __post_init__(self):
        if not self.fd_step > 0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")

    # -- evaluation ------------------------------------------------------

    def __call__(self, x) -> float | np.ndarray:
        return _require_finite(self.value(as_point(x)), "field")

    def gradient(self, x) -> np.ndarray:
        """First derivative of a scalar field (exact when available)."""
        if self.exact_jacobian is not None:
            return np.asarray(self.exact_jacobian(as_point(x)), dtype=float)
        return self.fd_gradient(x)

    def jacobian(self, x) -> np.ndarray:
        """Jacobian of a vector field (exact when available)."""
        if self.exact_jacobian is not None:
            return np.asarray(self.exact_jacobian(as_point(x)), dtype=float)
        return self.fd_jacobian(x)

    def hessian(self, x) -> np.ndarray:
        x = as_point(x)
        if self.exact_hessian is not None:
            return np.asarray(self.exact_hessian(x), dtype=float)
        if self.exact_jacobian is not None:
            # One finite difference of an exact gradient keeps most accuracy.
            h = fd_jacobian(self.gradient, x, self.fd_step)
            return 0.5 * (h + h.T)
        return self.fd_hessian(x)

    # -- finite differences ----------------------------------------------

    def fd_gradient(self, x) -> np.ndarray:
        return fd_gradient(self.value, as_point(x), self.fd_step)

    def fd_jacobian(self, x) -> np.ndarray:
        return fd_jacobian(self.value, as_point(x), self.fd_step)

    def fd_hessian(self, x) -> np.ndarray:
        return fd_hessian(self.value, as_point(x), np.sqrt(self.fd_step))

    def crosscheck(self, x) -> float:
        """Max componentwise gap between exact and finite differences.

        Returns 0.0 when no exact callbacks are present.
        """
        x = as_point(x)
        worst = 0.0
        if self.exact_jacobian is not None:
            exact = np.asarray(self.exact_jacobian(x), dtype=float)
            fd = fd_jacobian(self.value, x, self.fd_step) if exact.ndim == 2 else self.fd_gradient(x)
            worst = max(worst, float(np.max(np.abs(exact - fd))))
        if self.exact_hessian is not None:
            exact = np.asarray(self.exact_hessian(x), dtype=float)
            worst = max(worst, float(np.max(np.abs(exact - self.fd_hessian(x)))))
        return worst


def fd_gradient(f, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar field."""
    x = as_point(x)
    grad = np.empty(x.size)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        grad[i] = (f(xp) - f(xm)) / (2.0 * step)
    return _require_finite(grad, "finite-difference gradient")


def fd_jacobian(f, x, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector field, rows = components."""
    x = as_point(x)
    cols = []
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        cols.append((np.atleast_1d(f(xp)) - np.atleast_1d(f(xm))) / (2.0 * step))
    return _require_finite(np.stack(cols, axis=-1), "finite-difference jacobian")


def fd_hessian(f, x, step: float = 1e-3) -> np.ndarray:
    """Second central differences of a scalar field, symmetrized."""
    x = as_point(x)
    d = x.size
    hess = np.empty((d, d))
    f0 = float(f(x))
    for i in range(d):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        hess[i, i] = (float(f(xp)) - 2.0 * f0 + float(f(xm))) / step**2
        for j in range(i + 1, d):
            xpp, xpm, xmp, xmm = x.copy(), x.copy(), x.copy(), x.copy()
            xpp[[i, j]] += step
            xmm[[i, j]] -= step
            xpm[i] += step
            xpm[j] -= step
            xmp[i] -= step
            xmp[j] += step
            val = (float(f(xpp)) - float(f(xpm)) - float(f(xmp)) + float(f(xmm))) / (4.0 * step**2)
            hess[i, j] = hess[j, i] = val
    return _require_finite(hess, "finite-difference hessian")


# -- antisymmetric forms ---------------------------------------------------


def antisymmetrize(m) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    return 0.5 * (a - a.T)


def is_antisymmetric(m, tol: float = 0.0) -> bool:
    a = np.asarray(m, dtype=float)
    return bool(np.max(np.abs(a + a.T)) <= tol) if a.size else True


def kernel_basis(m, rtol: float = KERNEL_RTOL) -> np.ndarray:
    """Orthonormal basis of the null space, columns as kernel vectors."""
    m = np.asarray(m, dtype=float)
    _, s, vt = np.linalg.svd(m)
    if s.size == 0 or s[0] <= 0.0:
        return np.eye(m.shape[1])
    rank = int(np.sum(s > rtol * s[0]))
    return vt[rank:].T


def one_form_exterior_derivative(coeffs, x, step: float = 1e-6) -> np.ndarray:
    """Exterior derivative of a 1-form from its coefficient function.

    ``coeffs`` maps a point to the covector components; the result has
    ``d[i, j] = d_i coeffs_j - d_j coeffs_i``.
    """
    grad = fd_jacobian(coeffs, x, step).T  # grad[i, j] = d_i coeffs_j
    return grad - grad.T


def two_form_closedness_defect(form, x, step: float = 1e-6) -> float:
    """Max cyclic-sum violation of d(form) = 0 at ``x``.

    ``form`` maps a point to an antisymmetric matrix.
    """
    x = as_point(x)
    d = x.size
    partial = []
    for u in range(d):
        xp, xm = x.copy(), x.copy()
        xp[u] += step
        xm[u] -= step
        partial.append((np.asarray(form(xp)) - np.asarray(form(xm))) / (2.0 * step))
    worst = 0.0
    for u in range(d):
        for v in range(u + 1, d):
            for w in range(v + 1, d):
                cyc = partial[u][v, w] + partial[v][w, u] + partial[w][u, v]
                worst = max(worst, abs(float(cyc)))
    return worst


# -- solvers ----------------------------------------------------------------


def newton_solve(residual, jacobian, x0, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Plain undamped Newton iteration for ``residual(x) = 0``.

    The residual is checked before stepping, so a call started at a root
    returns it unchanged.  Deterministic for fixed inputs.
    """
    x = as_point(x0).copy()
    res = as_point(residual(x))
    _require_finite(res, "newton residual")
    norm = float(np.max(np.abs(res)))
    for _ in range(max_iter):
        if norm <= tol:
            return x
        jac = np.atleast_2d(np.asarray(jacobian(x), dtype=float))
        try:
            step = np.linalg.solve(jac, res)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"singular Jacobian at iterate {x}") from exc
        if not np.all(np.isfinite(step)):
            raise SingularJacobian(f"non-finite Newton step at iterate {x}")
        x = x - step
        res = as_point(residual(x))
        _require_finite(res, "newton residual")
        norm = float(np.max(np.abs(res)))
    if norm <= tol:
        return x
    raise NoConvergence(
        f"no convergence after {max_iter} iterations (last residual {norm:.3e})",
        residual_norm=norm,
    )


@dataclass
class LsqSolution:
    """Result of a kernel-aware antisymmetric solve.

    ``kernel`` spans the null space of the full matrix; ``gauge_kernel``
    spans the directions (embedded in full coordinates) left free after the
    fixed components are pinned.
    """

    solution: np.ndarray
    kernel: np.ndarray
    consistent: bool
    residual: float
    gauge_kernel: np.ndarray


def constrained_lsq_solve(m, b, fixed: dict[int, float] | None = None) -> LsqSolution:
    """Minimum-norm solution of ``m @ x = b`` with pinned components.

    ``m`` must be antisymmetric.  ``consistent`` reports whether ``b`` is
    orthogonal to the kernel of ``m`` (the solvability test); when it is and
    the pinned components still leave a large residual, the assignment
    contradicts the system and ``InconsistentConstraint`` is raised.
    """
    m = np.asarray(m, dtype=float)
    b = as_point(b)
    d = b.size
    if m.shape != (d, d):
        raise ValueError(f"matrix shape {m.shape} does not match rhs of size {d}")
    if not is_antisymmetric(m, tol=1e-12 * max(1.0, float(np.max(np.abs(m))))):
        raise ValueError("matrix is not antisymmetric")

    ker = kernel_basis(m)
    b_scale = 1.0 + float(np.max(np.abs(b))) if d else 1.0
    consistent = ker.shape[1] == 0 or float(np.max(np.abs(ker.T @ b))) < CONSISTENCY_RTOL * b_scale

    fixed = dict(fixed or {})
    for idx in fixed:
        if not 0 <= idx < d:
            raise ValueError(f"fixed index {idx} out of range for dimension {d}")
    free = [i for i in range(d) if i not in fixed]

    x = np.zeros(d)
    rhs = b.copy()
    if fixed:
        idx = np.fromiter(fixed.keys(), dtype=int)
        vals = np.fromiter(fixed.values(), dtype=float)
        x[idx] = vals
        rhs = rhs - m[:, idx] @ vals

    if free:
        a = m[:, free]
        u, s, vt = np.linalg.svd(a, full_matrices=True)
        if s.size and s[0] > 0.0:
            rank = int(np.sum(s > KERNEL_RTOL * s[0]))
        else:
            rank = 0
        coeff = (u[:, :rank].T @ rhs) / s[:rank] if rank else np.zeros(0)
        x[free] = vt[:rank].T @ coeff
        gauge = np.zeros((d, vt.shape[0] - rank))
        gauge[free, :] = vt[rank:].T
    else:
        gauge = np.zeros((d, 0))

    residual = float(np.max(np.abs(m @ x - b))) if d else 0.0
    if consistent and fixed and residual > RESIDUAL_RTOL * b_scale:
        raise InconsistentConstraint(
            f"fixed assignment incompatible with the system (residual {residual:.3e})"
        )
    return LsqSolution(solution=x, kernel=ker, consistent=consistent,
                       residual=residual, gauge_kernel=gauge)
