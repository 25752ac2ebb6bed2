"""Compatible transformations between fiber-product Lagrangian systems.

A transformation pair links a tall bundle (downstairs) to a wider one
(upstairs) through two coordinate projections.  In adapted coordinates the
downstairs state is ``(q, v | qbar, pbar, pfib)`` and the upstairs state is
``(q, qbar | v, vbar | pbar)``: the projections simply drop ``pfib`` on
configurations and ``qbar`` on bases.  The compatible transformation copies
every shared slot and solves the remaining fiber velocity ``vbar`` from the
prescribed covector: the fiber slice of the upstairs velocity gradient must
equal the target values.  Regularity of the fiber velocity Hessian makes
that solve well posed and the result independent of the starting guess.

The induced downstairs system subtracts the connection pairing from the
pulled-back Lagrangian and augments the magnetic form by the exterior
derivative of the paired connection form; its energy and 2-form then pull
back exactly from upstairs.  Derivatives of the induced Lagrangian are
exact whenever the upstairs Hessian, the target derivatives and the
connection coefficient derivatives are exact; the implicit derivative of
the solved fiber velocity is::

    d vbar = K^{-1} (d target - H[vbar, shared slots])

with ``K`` the fiber velocity Hessian.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import numcore
from .errors import (
    NoConvergence,
    NonFiniteEvaluation,
    NotFreeAction,
    NotInImage,
    SingularJacobian,
)
from .lagrangian import (
    BundleDims,
    MagneticLagrangianSystem,
    as_state_array,
    check_hyperregular,
    energy,
    presymplectic_matrix,
)
from .numcore import DerivativeProvider, as_point
from .symmetry import Connection, GroupAction


@dataclass(frozen=True)
class TransformationPair:
    """Adapted-coordinate projections between two fiber products.

    ``k_f`` counts the ``qbar`` coordinates (fibers of the base projection),
    ``k_F`` the ``pfib`` coordinates (fibers of the configuration
    projection).  The identity linking the two bundle projections holds by
    construction in these coordinates.
    """

    dims1: BundleDims
    dims2: BundleDims
    k_f: int
    k_F: int

    def __post_init__(self):
        if self.k_f < 0 or self.k_F < 0:
            raise ValueError("fiber dimensions must be nonnegative")
        if self.dims2.n != self.dims1.n + self.k_f:
            raise ValueError("upstairs base must extend the downstairs base by k_f")
        if self.dims1.k != self.k_f + self.dims2.k + self.k_F:
            raise ValueError("downstairs fiber must split as k_f + k2 + k_F")

    # -- downstairs state slices: (q, v, qbar, pbar, pfib) ----------------

    @property
    def n1(self) -> int:
        return self.dims1.n

    @property
    def n2(self) -> int:
        return self.dims2.n

    @property
    def k2(self) -> int:
        return self.dims2.k

    def split_down(self, x1):
        x1 = as_point(x1)
        n1, kf, k2 = self.n1, self.k_f, self.k2
        q = x1[:n1]
        v = x1[n1:2 * n1]
        qbar = x1[2 * n1:2 * n1 + kf]
        pbar = x1[2 * n1 + kf:2 * n1 + kf + k2]
        pfib = x1[2 * n1 + kf + k2:]
        return q, v, qbar, pbar, pfib

    def split_up(self, x2):
        x2 = as_point(x2)
        n1, n2, k2 = self.n1, self.n2, self.k2
        q = x2[:n1]
        qbar = x2[n1:n2]
        v = x2[n2:n2 + n1]
        vbar = x2[n2 + n1:2 * n2]
        pbar = x2[2 * n2:]
        return q, qbar, v, vbar, pbar

    def down_config(self, x1) -> np.ndarray:
        """Tall configuration point (q, qbar, pbar, pfib)."""
        x1 = as_point(x1)
        return np.concatenate([x1[:self.n1], x1[2 * self.n1:]])

    def up_config_of_down(self, x1) -> np.ndarray:
        return self.down_config(x1)[:self.n2 + self.k2]

    def assemble_up(self, x1, vbar) -> np.ndarray:
        q, v, qbar, pbar, _ = self.split_down(x1)
        return np.concatenate([q, qbar, v, as_point(vbar), pbar])

    def up_vbar_slice(self) -> slice:
        return slice(self.n2 + self.n1, 2 * self.n2)

    def point_compatibility_defect(self, x1, x2) -> float:
        q1, v1, qbar1, pbar1, _ = self.split_down(x1)
        q2, qbar2, v2, _, pbar2 = self.split_up(x2)
        gaps = [q1 - q2, qbar1 - qbar2, v1 - v2, pbar1 - pbar2]
        return max((float(np.max(np.abs(g))) for g in gaps if g.size), default=0.0)

    def vector_compatibility_defect(self, y_down, x_up) -> float:
        """Shared-slot mismatch between tangent vectors at compatible points."""
        q1, v1, qbar1, pbar1, _ = self.split_down(y_down)
        q2, qbar2, v2, _, pbar2 = self.split_up(x_up)
        gaps = [q1 - q2, qbar1 - qbar2, v1 - v2, pbar1 - pbar2]
        return max((float(np.max(np.abs(g))) for g in gaps if g.size), default=0.0)

    def compatible_down_vector(self, x_up, pfib_part=None) -> np.ndarray:
        """The downstairs vector sharing every common slot with ``x_up``."""
        q, qbar, v, _, pbar = self.split_up(x_up)
        pfib = np.zeros(self.k_F) if pfib_part is None else as_point(pfib_part)
        return np.concatenate([q, v, qbar, pbar, pfib])


@dataclass
class MomentumTarget:
    """Prescribed fiber-momentum covector on the downstairs configurations.

    ``values`` maps a tall configuration point to the ``k_f`` covector
    components the fiber velocity gradient has to match.  ``jacobian`` and
    ``hessian`` are exact derivatives over the configuration point; absent
    ones fall back to central differences.  ``constant`` marks targets that
    do not vary with the point at all, which lets derivative terms be
    skipped wholesale.
    """

    k_f: int
    values: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-6
    constant: bool = False

    def __call__(self, point) -> np.ndarray:
        out = as_point(self.values(as_point(point)))
        if out.size != self.k_f:
            raise ValueError(f"target has {out.size} components, expected {self.k_f}")
        return out

    def jacobian_matrix(self, point) -> np.ndarray:
        point = as_point(point)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(point), dtype=float)
        return numcore.fd_jacobian(self.__call__, point, self.fd_step)

    def hessian_tensor(self, point) -> np.ndarray:
        point = as_point(point)
        if self.hessian is not None:
            return np.asarray(self.hessian(point), dtype=float)
        step = np.sqrt(self.fd_step)
        out = np.empty((self.k_f, point.size, point.size))
        for a in range(self.k_f):
            out[a] = numcore.fd_hessian(lambda y, a=a: float(self(y)[a]), point, step)
        return out

    @property
    def exact(self) -> bool:
        return self.jacobian is not None and self.hessian is not None


def constant_momentum_target(values) -> MomentumTarget:
    vals = as_point(values)
    k_f = vals.size

    def jac(point):
        return np.zeros((k_f, as_point(point).size))

    def hess(point):
        d = as_point(point).size
        return np.zeros((k_f, d, d))

    return MomentumTarget(k_f=k_f, values=lambda _p: vals, jacobian=jac,
                          hessian=hess, constant=True)


@dataclass
class CompatibleTransformation:
    """The realized map from downstairs states to upstairs states."""

    pair: TransformationPair
    source: MagneticLagrangianSystem  # upstairs system
    target: MomentumTarget
    connection: Connection
    newton_tol: float = 1e-12
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.source.dims != self.pair.dims2:
            raise ValueError("upstairs system dimensions do not match the pair")
        if self.target.k_f != self.pair.k_f:
            raise ValueError("target covector size does not match the pair")
        if (self.connection.base_dim, self.connection.fiber_dim) != (self.pair.n1, self.pair.k_f):
            raise ValueError("connection dimensions do not match the pair")


@dataclass
class FiberRegularityReport:
    determinants: np.ndarray
    conditions: np.ndarray

    @property
    def f_regular(self) -> bool:
        return bool(np.all(np.abs(self.determinants) > 0)
                    and np.all(np.isfinite(self.conditions)))


def check_fiber_regular(sys2: MagneticLagrangianSystem, pair: TransformationPair,
                        probes: Sequence) -> FiberRegularityReport:
    """Determinant and condition of the fiber velocity Hessian block."""
    dets, conds = [], []
    sl = pair.up_vbar_slice()
    for s in probes:
        x2 = as_state_array(sys2.dims, s)
        k = sys2.lagrangian.hessian(x2)[sl, sl]
        dets.append(float(np.linalg.det(k)) if k.size else 1.0)
        sv = np.linalg.svd(k, compute_uv=False) if k.size else np.array([1.0])
        conds.append(float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf)
    return FiberRegularityReport(determinants=np.array(dets), conditions=np.array(conds))


def _fiber_gradient(ct: CompatibleTransformation, x2) -> np.ndarray:
    return ct.source.lagrangian.gradient(x2)[ct.pair.up_vbar_slice()]


def _fiber_hessian(ct: CompatibleTransformation, x2) -> np.ndarray:
    sl = ct.pair.up_vbar_slice()
    return ct.source.lagrangian.hessian(x2)[sl, sl]


def _solve_fiber_velocity(ct: CompatibleTransformation, x1: np.ndarray,
                          initial_guess=None):
    """Inline Newton for the fiber velocity; shared by every evaluation.

    Returns the upstairs state, the upstairs gradient already evaluated at
    it, the target covector, the tall configuration point and the
    connection coefficients (when the horizontal seed needed them).
    Undamped steps, residual checked before stepping, same error contract
    as :func:`routhkit.numcore.newton_solve`.
    """
    pair = ct.pair
    lay = _pair_layout(pair)
    n1, n2, kf, k2 = pair.n1, pair.n2, pair.k_f, pair.k2
    p1 = x1[lay.config_slots]
    if ct.target.constant:
        beta = ct.__dict__.get("_beta_cache")
        if beta is None:
            beta = ct.target(p1)
            ct.__dict__["_beta_cache"] = beta
    else:
        beta = ct.target(p1)

    x2 = np.empty(pair.dims2.state_dim)
    x2[:n1] = x1[:n1]
    x2[n1:n2] = x1[2 * n1:2 * n1 + kf]
    x2[n2:n2 + n1] = x1[n1:2 * n1]
    if k2:
        x2[2 * n2:] = x1[2 * n1 + kf:2 * n1 + kf + k2]
    grad_fn = ct.source.lagrangian.gradient
    if kf == 0:
        return x2, grad_fn(x2), beta, p1, None

    sl = pair.up_vbar_slice()
    gamma = None
    if initial_guess is None:
        gamma = ct.connection.coefficients(p1[:n2])
        w = -(gamma @ x1[n1:2 * n1])
    else:
        w = as_point(initial_guess).astype(float, copy=True)
    single = pair.k_f == 1
    hess_fn = ct.source.lagrangian.hessian
    for _ in range(ct.newton_max_iter + 1):
        x2[sl] = w
        g2 = grad_fn(x2)
        resid = g2[sl] - beta
        if single:
            norm = abs(resid[0])
        else:
            norm = float(np.max(np.abs(resid)))
        if not norm <= ct.newton_tol:  # also catches NaN
            if not np.isfinite(norm):
                raise NonFiniteEvaluation("fiber momentum evaluated to a non-finite value")
            kmat = hess_fn(x2)[sl, sl]
            if single:
                if kmat[0, 0] == 0.0:
                    raise SingularJacobian("fiber velocity Hessian vanished")
                step = resid / kmat[0, 0]
            else:
                try:
                    step = np.linalg.solve(kmat, resid)
                except np.linalg.LinAlgError as exc:
                    raise SingularJacobian("singular fiber velocity Hessian") from exc
            if not np.isfinite(step).all():
                raise SingularJacobian("non-finite Newton step in the fiber solve")
            w = w - step
        else:
            return x2, g2, beta, p1, gamma
    raise NoConvergence(
        f"fiber velocity solve did not converge (last residual {norm:.3e})",
        residual_norm=norm,
    )


def apply_transformation(ct: CompatibleTransformation, s1, initial_guess=None) -> np.ndarray:
    """Map a downstairs state to its upstairs image.

    Shared coordinates are copied; the fiber velocity solves the momentum
    condition by Newton iteration seeded with the connection-horizontal
    value (the canonical choice given the already-required connection).
    The result does not depend on the seed: fiber regularity makes the
    solved velocity unique.
    """
    x1 = as_state_array(ct.pair.dims1, s1)
    return _solve_fiber_velocity(ct, x1, initial_guess)[0]


def characterization_residual(ct: CompatibleTransformation, s1, s2=None) -> float:
    """Gap between the image's fiber momentum and the prescribed covector."""
    x1 = as_state_array(ct.pair.dims1, s1)
    x2 = apply_transformation(ct, x1) if s2 is None else as_state_array(ct.pair.dims2, s2)
    beta = ct.target(ct.pair.down_config(x1))
    gap = _fiber_gradient(ct, x2) - beta
    return float(np.max(np.abs(gap))) if gap.size else 0.0


# -- exact chain-rule machinery ---------------------------------------------


@dataclass(frozen=True)
class _PairLayout:
    """Static index data of a pair, shared and read-only.

    ``sel`` maps each downstairs slot to the upstairs slot it copies to
    (-1 for the dropped fiber); ``config_slots`` lists the downstairs state
    slots forming the tall configuration point; ``q2_slots`` the subset
    forming the upstairs configuration.
    """

    sel: np.ndarray
    col_idx: np.ndarray
    up_idx: np.ndarray
    config_slots: np.ndarray
    cj: np.ndarray
    q2_slots: np.ndarray
    up_grid: tuple
    down_grid: tuple
    vrow_q2_grid: tuple
    q2_vrow_grid: tuple
    q2_q2_grid: tuple


@lru_cache(maxsize=None)
def _pair_layout(pair: TransformationPair) -> _PairLayout:
    n1, n2, kf, k2 = pair.n1, pair.n2, pair.k_f, pair.k2
    d1 = pair.dims1.state_dim
    sel = -np.ones(d1, dtype=int)
    sel[:n1] = np.arange(n1)                                    # q
    sel[n1:2 * n1] = n2 + np.arange(n1)                         # v
    sel[2 * n1:2 * n1 + kf] = n1 + np.arange(kf)                # qbar
    sel[2 * n1 + kf:2 * n1 + kf + k2] = 2 * n2 + np.arange(k2)  # pbar
    col_idx = np.where(sel >= 0)[0]
    up_idx = sel[col_idx]
    config_slots = np.array(list(range(n1)) + list(range(2 * n1, d1)), dtype=int)
    cj = np.zeros((config_slots.size, d1))
    cj[np.arange(config_slots.size), config_slots] = 1.0
    q2_slots = np.array(list(range(n1)) + list(range(2 * n1, 2 * n1 + kf)), dtype=int)
    vrows = n1 + np.arange(n1)
    for arr in (sel, col_idx, up_idx, config_slots, cj, q2_slots, vrows):
        arr.setflags(write=False)
    return _PairLayout(
        sel=sel, col_idx=col_idx, up_idx=up_idx, config_slots=config_slots,
        cj=cj, q2_slots=q2_slots,
        up_grid=np.ix_(up_idx, up_idx),
        down_grid=np.ix_(col_idx, col_idx),
        vrow_q2_grid=np.ix_(vrows, q2_slots),
        q2_vrow_grid=np.ix_(q2_slots, vrows),
        q2_q2_grid=np.ix_(q2_slots, q2_slots),
    )


@dataclass
class _TransformationData:
    """Everything the chain rule needs at one downstairs state."""

    x1: np.ndarray
    x2: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray          # (k_f, n1)
    pairing: np.ndarray        # vbar + gamma @ v, per fiber component
    dvbar: np.ndarray          # (k_f, dim1)
    dbeta_state: np.ndarray | None  # (k_f, dim1); None when the target is constant
    dpair_state: np.ndarray    # (k_f, dim1), derivative of gamma @ v part
    dgamma: np.ndarray         # (k_f, n1, n2)
    fiber_hessian: np.ndarray  # (k_f, k_f)
    up_gradient: np.ndarray
    up_hessian: np.ndarray
    pair: TransformationPair

    def full_jacobian(self) -> np.ndarray:
        lay = _pair_layout(self.pair)
        jac = np.zeros((self.pair.dims2.state_dim, self.pair.dims1.state_dim))
        jac[lay.up_idx, lay.col_idx] = 1.0
        jac[self.pair.up_vbar_slice(), :] = self.dvbar
        return jac


def _transformation_data(ct: CompatibleTransformation, x1) -> _TransformationData:
    pair = ct.pair
    x1 = as_state_array(pair.dims1, x1)
    n1, kf = pair.n1, pair.k_f
    d1 = pair.dims1.state_dim
    lay = _pair_layout(pair)

    x2, grad2, beta, p1, gamma = _solve_fiber_velocity(ct, x1)
    q2 = p1[:pair.n2]
    v = x1[n1:2 * n1]
    if gamma is None:
        gamma = ct.connection.coefficients(q2)
    vbar = x2[pair.up_vbar_slice()]
    pairing = vbar + gamma @ v

    dbeta_state = None
    if not ct.target.constant:
        dbeta_state = ct.target.jacobian_matrix(p1) @ lay.cj

    # Derivative of the connection pairing (the gamma @ v part only).
    dgam = ct.connection.coefficients_jacobian(q2)  # (k_f, n1, n2)
    dpair_state = np.zeros((kf, d1))
    dpair_state[:, n1:2 * n1] = gamma
    if kf and dgam.any():
        dgv = v @ dgam  # (k_f, n2)
        dpair_state[:, :n1] += dgv[:, :n1]
        dpair_state[:, 2 * n1:2 * n1 + kf] += dgv[:, n1:]

    hess2 = ct.source.lagrangian.hessian(x2)
    sl = pair.up_vbar_slice()
    kmat = hess2[sl, sl]

    # Implicit derivative of the solved fiber velocity.
    if kf:
        rhs = np.zeros((kf, d1)) if dbeta_state is None else dbeta_state.copy()
        rhs[:, lay.col_idx] -= hess2[sl, :][:, lay.up_idx]
        dvbar = rhs / kmat[0, 0] if kf == 1 else np.linalg.solve(kmat, rhs)
    else:
        dvbar = np.zeros((0, d1))

    return _TransformationData(x1=x1, x2=x2, beta=beta, gamma=gamma, pairing=pairing,
                               dvbar=dvbar, dbeta_state=dbeta_state,
                               dpair_state=dpair_state, dgamma=dgam,
                               fiber_hessian=kmat, up_gradient=grad2,
                               up_hessian=hess2, pair=pair)


def transformation_jacobian(ct: CompatibleTransformation, s1,
                            fd: bool = False) -> np.ndarray:
    """Tangent map of the transformation (exact chain rule or central FD)."""
    x1 = as_state_array(ct.pair.dims1, s1)
    if fd:
        return numcore.fd_jacobian(lambda y: apply_transformation(ct, y), x1,
                                   ct.source.lagrangian.fd_step)
    return _transformation_data(ct, x1).full_jacobian()


def induced_system(ct: CompatibleTransformation,
                   periodic_coords=frozenset(), name: str = "") -> MagneticLagrangianSystem:
    """Downstairs system whose 2-form and energy pull back from upstairs.

    The Lagrangian subtracts the connection pairing of the target covector
    from the pulled-back value; the magnetic form adds the exterior
    derivative of the paired connection 1-form to the embedded upstairs
    form.  Exact first and second derivatives are produced whenever the
    upstairs provider, the target and the connection all carry exact
    derivatives; otherwise finite differences take over.
    """
    pair = ct.pair
    n1, kf = pair.n1, pair.k_f
    d1 = pair.dims1.state_dim
    lay = _pair_layout(pair)
    hessian_fn = ct.connection.coefficients_hessian

    # Integrator stages query value, gradient and Hessian of one state in a
    # row, so the assembled outputs are memoized per point (read-only).
    cache: dict = {"key": None, "data": None, "grad": None, "hess": None}

    def data_at(x1) -> _TransformationData:
        key = x1.tobytes()
        if cache["key"] != key:
            cache["data"] = _transformation_data(ct, x1)
            cache["key"] = key
            cache["grad"] = None
            cache["hess"] = None
        return cache["data"]

    def value(x1):
        d = data_at(as_state_array(pair.dims1, x1))
        return float(ct.source.lagrangian(d.x2) - d.beta @ d.pairing)

    exact = (ct.source.lagrangian.exact_jacobian is not None
             and ct.source.lagrangian.exact_hessian is not None
             and ct.target.exact
             and ct.connection.dgamma is not None
             and ct.connection.d2gamma is not None)

    def gradient(x1):
        x1 = as_state_array(pair.dims1, x1)
        d = data_at(x1)
        if cache["grad"] is not None:
            return cache["grad"]
        grad = np.zeros(d1)
        grad[lay.col_idx] = d.up_gradient[lay.up_idx]
        if d.dbeta_state is not None:
            grad -= d.dbeta_state.T @ d.pairing
        grad -= d.dpair_state.T @ d.beta
        grad.setflags(write=False)
        cache["grad"] = grad
        return grad

    def hessian(x1):
        x1 = as_state_array(pair.dims1, x1)
        d = data_at(x1)
        if cache["hess"] is not None:
            return cache["hess"]
        v = x1[n1:2 * n1]

        hess = np.zeros((d1, d1))
        hess[lay.down_grid] = d.up_hessian[lay.up_grid]
        if kf == 1:
            hess -= d.fiber_hessian[0, 0] * np.outer(d.dvbar[0], d.dvbar[0])
        elif kf:
            hess -= d.dvbar.T @ d.fiber_hessian @ d.dvbar

        if d.dbeta_state is not None:
            p1 = x1[lay.config_slots]
            d2beta = ct.target.hessian_tensor(p1)
            for a in range(kf):
                block = lay.cj.T @ d2beta[a] @ lay.cj
                hess -= d.pairing[a] * block
            hess -= d.dbeta_state.T @ d.dpair_state + d.dpair_state.T @ d.dbeta_state

        # Second derivative of the connection pairing term (gamma @ v part).
        # Each piece is gated on its own pointwise value: the coefficient
        # jacobian can vanish where the curvature does not.
        if kf:
            if d.dgamma.any():
                cross = d.beta[0] * d.dgamma[0]  # (n1, n2)
                for a in range(1, kf):
                    cross = cross + d.beta[a] * d.dgamma[a]
                hess[lay.vrow_q2_grid] -= cross
                hess[lay.q2_vrow_grid] -= cross.T
            q2 = x1[lay.config_slots][:pair.n2]
            d2gam = hessian_fn(q2)
            if d2gam.any():
                # curvature contraction: sum_a sum_i beta_a v_i d2gam[a, i]
                acc = None
                for a in range(kf):
                    for i in range(n1):
                        weight = d.beta[a] * v[i]
                        if weight != 0.0:
                            term = weight * d2gam[a, i]
                            acc = term if acc is None else acc + term
                if acc is not None:
                    hess[lay.q2_q2_grid] -= acc
        hess.setflags(write=False)
        cache["hess"] = hess
        return hess

    provider = DerivativeProvider(
        value=value,
        exact_jacobian=gradient if exact else None,
        exact_hessian=hessian if exact else None,
        fd_step=ct.source.lagrangian.fd_step,
    )

    base_form = induced_magnetic_form(ct)
    if base_form is None:
        magnetic = None
    else:
        # The integrator asks for the form right after the derivatives of
        # the same state; reuse the memoized point data when it matches.
        def magnetic(p1_point):
            d = cache["data"]
            if d is not None and p1_point.shape == (d1 - n1,) \
                    and np.array_equal(p1_point, d.x1[lay.config_slots]):
                return _assemble_paired_form(ct, d, p1_point)
            return base_form(p1_point)

    el_terms = None
    if exact:
        # Restriction of the chain rule to the blocks the gauge-fixed solve
        # consumes; must match the assembled derivatives exactly.
        n2 = pair.n2
        vs = slice(n2, n2 + n1)
        dp2_config = pair.dims2.config_dim

        def el_terms(x1):
            x1 = as_state_array(pair.dims1, x1)
            d = data_at(x1)
            h2 = d.up_hessian
            kdv = d.fiber_hessian @ d.dvbar if kf else None
            if kf:
                dv_v = d.dvbar[:, n1:2 * n1]
                w = h2[vs, vs] - dv_v.T @ kdv[:, n1:2 * n1]
                c = h2[vs, :n1] - dv_v.T @ kdv[:, :n1]
            else:
                w = h2[vs, vs].copy()
                c = h2[vs, :n1].copy()
            grad_q = d.up_gradient[:n1] - d.dpair_state[:, :n1].T @ d.beta
            if d.dbeta_state is not None:
                dbeta_q = d.dbeta_state[:, :n1]
                grad_q = grad_q - dbeta_q.T @ d.pairing
                c -= d.gamma.T @ dbeta_q
            contracted = None
            if kf and d.dgamma.any():
                contracted = d.beta[0] * d.dgamma[0]
                for a in range(1, kf):
                    contracted = contracted + d.beta[a] * d.dgamma[a]
                c -= contracted[:, :n1]
            if magnetic is None:
                b = None
            else:
                gradq = np.zeros((n1, n1))
                if contracted is not None:
                    gradq += contracted[:, :n1].T
                if d.dbeta_state is not None:
                    gradq += d.dbeta_state[:, :n1].T @ d.gamma
                b = gradq - gradq.T
                if ct.source.magnetic_form is not None:
                    p1 = x1[lay.config_slots]
                    b = b + ct.source.magnetic_matrix(p1[:dp2_config])[:n1, :n1]
            return w, c, grad_q, b

    return MagneticLagrangianSystem(
        dims=pair.dims1,
        lagrangian=provider,
        magnetic_form=magnetic,
        periodic_coords=frozenset(periodic_coords),
        name=name or (ct.source.name + "_induced" if ct.source.name else "induced"),
        el_terms=el_terms,
    )


def _assemble_paired_form(ct: CompatibleTransformation, d: _TransformationData,
                          p1_point: np.ndarray) -> np.ndarray:
    """Induced magnetic form from already-computed point data."""
    pair = ct.pair
    dp1 = pair.dims1.config_dim
    dp2 = pair.dims2.config_dim
    n1, kf = pair.n1, pair.k_f
    mat = np.zeros((dp1, dp1))
    if ct.source.magnetic_form is not None:
        mat[:dp2, :dp2] = ct.source.magnetic_matrix(p1_point[:dp2])
    if kf == 0:
        return mat
    grad = np.zeros((dp1, dp1))
    if d.dgamma.any():
        contracted = d.beta[0] * d.dgamma[0]
        for a in range(1, kf):
            contracted = contracted + d.beta[a] * d.dgamma[a]
        grad[:pair.n2, :n1] += contracted.T
    if not ct.target.constant:
        dbeta = ct.target.jacobian_matrix(p1_point)
        grad[:, :n1] += dbeta.T @ d.gamma
        grad[:, n1:n1 + kf] = dbeta.T
    mat += grad - grad.T
    return mat


def induced_magnetic_form(ct: CompatibleTransformation) -> Callable[[np.ndarray], np.ndarray] | None:
    """Embedded upstairs form plus the paired-connection exterior derivative.

    Returns ``None`` (the zero form) when it provably vanishes: no upstairs
    form, constant target and constant connection coefficients.
    """
    pair = ct.pair
    dp1 = pair.dims1.config_dim
    dp2 = pair.dims2.config_dim
    n1, n2, kf = pair.n1, pair.n2, pair.k_f
    if (ct.source.magnetic_form is None and ct.target.constant
            and ct.connection.constant):
        return None
    exact = (ct.target.jacobian is not None and ct.connection.dgamma is not None)

    def paired_coeffs(p1):
        beta = ct.target(p1)
        gamma = ct.connection.coefficients(p1[:n2])
        coeffs = np.zeros(dp1)
        coeffs[:n1] = beta @ gamma
        coeffs[n1:n1 + kf] = beta
        return coeffs

    def form(p1_point):
        p1_point = as_point(p1_point)
        mat = np.zeros((dp1, dp1))
        if ct.source.magnetic_form is not None:
            mat[:dp2, :dp2] = ct.source.magnetic_matrix(p1_point[:dp2])
        if kf == 0:
            return mat
        if exact:
            beta = ct.target(p1_point)
            grad = np.zeros((dp1, dp1))  # grad[u, w] = d_u coeffs_w
            dgam = ct.connection.coefficients_jacobian(p1_point[:n2])  # (k_f, n1, n2)
            if dgam.any():
                contracted = beta[0] * dgam[0]
                for a in range(1, kf):
                    contracted = contracted + beta[a] * dgam[a]
                grad[:n2, :n1] += contracted.T
            if not ct.target.constant:
                gamma = ct.connection.coefficients(p1_point[:n2])
                dbeta = ct.target.jacobian_matrix(p1_point)  # (k_f, dp1)
                grad[:, :n1] += dbeta.T @ gamma
                grad[:, n1:n1 + kf] = dbeta.T
            mat += grad - grad.T
        else:
            mat += numcore.one_form_exterior_derivative(
                paired_coeffs, p1_point, ct.source.lagrangian.fd_step)
        return mat

    return form


@dataclass
class PullbackReport:
    form_violations: np.ndarray
    energy_violations: np.ndarray

    @property
    def max_form_violation(self) -> float:
        return float(np.max(self.form_violations))

    @property
    def max_energy_violation(self) -> float:
        return float(np.max(self.energy_violations))


def verify_pullback_identities(ct: CompatibleTransformation,
                               induced: MagneticLagrangianSystem,
                               probes: Sequence, fd_jacobian: bool = False) -> PullbackReport:
    """Pointwise pullback defects of the 2-form and the energy."""
    fv, ev = [], []
    for s in probes:
        x1 = as_state_array(ct.pair.dims1, s)
        x2 = apply_transformation(ct, x1)
        jac = transformation_jacobian(ct, x1, fd=fd_jacobian)
        omega2 = presymplectic_matrix(ct.source, x2)
        omega1 = presymplectic_matrix(induced, x1)
        fv.append(float(np.max(np.abs(jac.T @ omega2 @ jac - omega1))))
        ev.append(abs(energy(ct.source, x2) - energy(induced, x1)))
    return PullbackReport(form_violations=np.array(fv), energy_violations=np.array(ev))


@dataclass
class TangencyReport:
    defects: np.ndarray

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defects))


def verify_tangency(ct: CompatibleTransformation, upstairs_field,
                    probes: Sequence, upstairs_states: Sequence | None = None,
                    image_tol: float = 1e-8) -> TangencyReport:
    """Defect of the image-membership condition for an upstairs vector field.

    At each probe the upstairs vector is tested against the compatible
    downstairs vector it determines: the derivative of the fiber momentum
    along the vector must equal the derivative of the target covector along
    the projected vector.  Downstairs ``pfib`` components are free, so they
    are fitted by least squares before scoring.
    """
    pair = ct.pair
    defects = []
    for idx, s in enumerate(probes):
        x1 = as_state_array(pair.dims1, s)
        if upstairs_states is not None:
            x2 = as_state_array(pair.dims2, upstairs_states[idx])
            if characterization_residual(ct, x1, x2) > image_tol:
                raise NotInImage(
                    f"upstairs probe {idx} does not satisfy the momentum condition")
        else:
            x2 = apply_transformation(ct, x1)
        xv = as_point(upstairs_field(x2))
        y_known = pair.compatible_down_vector(xv)

        hess2 = ct.source.lagrangian.hessian(x2)
        lhs = hess2[pair.up_vbar_slice(), :] @ xv  # derivative of fiber momentum along X

        p1 = pair.down_config(x1)
        dbeta = ct.target.jacobian_matrix(p1)  # over (q, qbar, pbar, pfib)
        cj = _pair_layout(pair)[4]
        rhs_known = dbeta @ (cj @ y_known)
        if pair.k_F:
            block = dbeta[:, pair.n2 + pair.k2:]  # pfib columns
            resid = lhs - rhs_known
            fit, *_ = np.linalg.lstsq(block, resid, rcond=None)
            resid = resid - block @ fit
            defects.append(float(np.max(np.abs(resid))) if resid.size else 0.0)
        else:
            gap = lhs - rhs_known
            defects.append(float(np.max(np.abs(gap))) if gap.size else 0.0)
    return TangencyReport(defects=np.array(defects))


@dataclass
class DiffeomorphismReport:
    applicable: bool
    ranks: np.ndarray | None = None
    full_rank: bool = False
    induced_hyperregular: bool | None = None


def check_diffeomorphic(ct: CompatibleTransformation, probes: Sequence,
                        induced: MagneticLagrangianSystem | None = None,
                        induced_probes: Sequence | None = None) -> DiffeomorphismReport:
    """Sampled-rank evidence that the transformation is invertible.

    Applicable only when the state dimensions agree (the embedding case is
    reported as such); then the target covector must vary fully along the
    dropped fiber, and the induced system should be hyperregular.
    """
    pair = ct.pair
    if pair.dims1.state_dim != pair.dims2.state_dim:
        return DiffeomorphismReport(applicable=False)
    ranks = []
    for s in probes:
        x1 = as_state_array(pair.dims1, s)
        dbeta = ct.target.jacobian_matrix(pair.down_config(x1))
        block = dbeta[:, pair.n2 + pair.k2:]
        sv = np.linalg.svd(block, compute_uv=False) if block.size else np.zeros(0)
        ranks.append(int(np.sum(sv > numcore.KERNEL_RTOL * max(sv[0] if sv.size else 0.0, 1.0))))
    ranks = np.array(ranks, dtype=int)
    full = bool(np.all(ranks == pair.k_F))
    hyper = None
    if induced is not None:
        hyper = check_hyperregular(induced, induced_probes if induced_probes is not None else probes).hyperregular
    return DiffeomorphismReport(applicable=True, ranks=ranks, full_rank=full,
                                induced_hyperregular=hyper)


def momentum_target_from_level(action: GroupAction, mu, delta=None) -> MomentumTarget:
    """Target covector matching a momentum level, shifted by a potential.

    Components are the inverse fiber generator block applied to the level
    plus the potential values.  The action must translate exactly the fiber
    coordinates (free at every point used); translation makes the generator
    block constant, so without a potential the target is a constant
    covector, precomputed here.
    """
    mu = as_point(mu)
    if mu.size != action.g_dim:
        raise ValueError("momentum level size does not match the algebra dimension")
    if action.translation_coords is None:
        raise NotFreeAction("momentum targets need designated translation coordinates")
    fiber = list(action.translation_coords)

    def inverse_block(point):
        block = action.fiber_block(point, fiber)
        try:
            return np.linalg.inv(block)
        except np.linalg.LinAlgError as exc:
            raise NotFreeAction("fiber generator block is singular") from exc

    if delta is None:
        vals = inverse_block(np.zeros(action.dim)).T @ mu
        return constant_momentum_target(vals)

    def values(p1):
        p1 = as_point(p1)
        return inverse_block(p1[:action.dim]).T @ (mu + delta(p1))

    jac = None
    if delta.jacobian is not None:
        def jac(p1):
            p1 = as_point(p1)
            return inverse_block(p1[:action.dim]).T @ delta.jacobian_matrix(p1)

    return MomentumTarget(k_f=len(fiber), values=values, jacobian=jac, hessian=None)
