"""Group actions in coordinates, momentum maps and principal connections.

Actions are stored through their infinitesimal generator matrix; finite
group transformations never appear, every check is infinitesimal.  Quotient
machinery is restricted to actions that translate designated coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numcore
from .errors import NonFiniteEvaluation, NotFreeAction, NotMechanical
from .lagrangian import MagneticLagrangianSystem, as_state_array
from .numcore import as_point


@dataclass
class GroupAction:
    """Infinitesimal action on a ``dim``-dimensional configuration space.

    ``generators`` maps a configuration point to the ``dim x g_dim`` matrix
    whose columns are the generator vector fields of a Lie algebra basis.
    ``structure_constants[a, b, c]`` are the coefficients of the bracket of
    basis elements b, c on basis element a; all zero for Abelian groups.
    ``translation_coords`` designates coordinates on which the action is a
    pure translation, which is what the quotient machinery requires.
    """

    dim: int
    g_dim: int
    generators: Callable[[np.ndarray], np.ndarray]
    structure_constants: np.ndarray | None = None
    translation_coords: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.structure_constants is None:
            self.structure_constants = np.zeros((self.g_dim,) * 3)
        c = np.asarray(self.structure_constants, dtype=float)
        if c.shape != (self.g_dim,) * 3:
            raise ValueError("structure constants must be a g x g x g array")
        if np.max(np.abs(c + np.swapaxes(c, 1, 2))) > 0:
            raise ValueError("structure constants must be antisymmetric in the lower indices")
        self.structure_constants = c
        if self.translation_coords is not None:
            self.translation_coords = tuple(int(i) for i in self.translation_coords)
            for i in self.translation_coords:
                if not 0 <= i < self.dim:
                    raise ValueError(f"translation coordinate {i} out of range")

    @property
    def abelian(self) -> bool:
        return bool(np.all(self.structure_constants == 0))

    def generator_matrix(self, point) -> np.ndarray:
        sigma = np.asarray(self.generators(as_point(point)), dtype=float)
        if sigma.shape != (self.dim, self.g_dim):
            raise ValueError(f"generator matrix has shape {sigma.shape}, "
                             f"expected ({self.dim}, {self.g_dim})")
        return sigma

    def fiber_block(self, point, fiber_coords: Sequence[int]) -> np.ndarray:
        """Generator rows on the designated fiber coordinates."""
        return self.generator_matrix(point)[list(fiber_coords), :]


def translation_action(dim: int, coords: Sequence[int]) -> GroupAction:
    """Abelian action translating the given coordinates at unit rate."""
    coords = tuple(int(i) for i in coords)
    sigma = np.zeros((dim, len(coords)))
    for col, i in enumerate(coords):
        sigma[i, col] = 1.0
    return GroupAction(dim=dim, g_dim=len(coords), generators=lambda _q: sigma,
                       translation_coords=coords)


@dataclass
class Connection:
    """Principal connection on a bundle with ``fiber_dim`` trailing fibers.

    Stored against the fiber frame: the connection 1-form has components
    ``gamma(point)[a, i]`` on the base slots and the identity on the fiber
    slots, so a horizontal velocity satisfies ``vbar = -gamma @ v``.
    Conversion to the Lie-algebra frame uses the inverse generator block of
    an action.  ``dgamma[a, i, j]`` and ``d2gamma[a, i, j, l]`` are exact
    derivatives with respect to the full configuration point; when absent,
    finite differences with step ``fd_step`` are used.
    """

    base_dim: int
    fiber_dim: int
    gamma: Callable[[np.ndarray], np.ndarray]
    dgamma: Callable[[np.ndarray], np.ndarray] | None = None
    d2gamma: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-6
    constant: bool = False

    @property
    def config_dim(self) -> int:
        return self.base_dim + self.fiber_dim

    def coefficients(self, point) -> np.ndarray:
        g = np.asarray(self.gamma(as_point(point)), dtype=float)
        if g.shape != (self.fiber_dim, self.base_dim):
            raise ValueError(f"connection coefficients have shape {g.shape}, "
                             f"expected ({self.fiber_dim}, {self.base_dim})")
        return g

    def coefficients_jacobian(self, point) -> np.ndarray:
        point = as_point(point)
        if self.dgamma is not None:
            out = np.asarray(self.dgamma(point), dtype=float)
        else:
            out = numcore.fd_jacobian(
                lambda y: self.coefficients(y).reshape(-1), point, self.fd_step
            ).reshape(self.fiber_dim, self.base_dim, point.size)
        if out.shape != (self.fiber_dim, self.base_dim, point.size):
            raise ValueError("connection coefficient jacobian has wrong shape")
        return out

    def coefficients_hessian(self, point) -> np.ndarray:
        point = as_point(point)
        d = point.size
        if self.d2gamma is not None:
            return np.asarray(self.d2gamma(point), dtype=float)
        step = np.sqrt(self.fd_step)
        out = np.empty((self.fiber_dim, self.base_dim, d, d))
        for a in range(self.fiber_dim):
            for i in range(self.base_dim):
                out[a, i] = numcore.fd_hessian(
                    lambda y, a=a, i=i: float(self.coefficients(y)[a, i]), point, step)
        return out

    def one_form_coefficients(self, point) -> np.ndarray:
        """Components of the fiber-frame 1-form over all configuration slots."""
        coeff = np.zeros((self.fiber_dim, self.config_dim))
        coeff[:, :self.base_dim] = self.coefficients(point)
        coeff[:, self.base_dim:] = np.eye(self.fiber_dim)
        return coeff

    def evaluate(self, point, velocity) -> np.ndarray:
        """Apply the fiber-frame 1-form to a configuration velocity."""
        return self.one_form_coefficients(point) @ as_point(velocity)


def flat_connection(base_dim: int, fiber_dim: int) -> Connection:
    zero = np.zeros((fiber_dim, base_dim))
    d = base_dim + fiber_dim
    return Connection(base_dim=base_dim, fiber_dim=fiber_dim,
                      gamma=lambda _q: zero,
                      dgamma=lambda _q: np.zeros((fiber_dim, base_dim, d)),
                      d2gamma=lambda _q: np.zeros((fiber_dim, base_dim, d, d)),
                      constant=True)


def constant_connection(base_dim: int, fiber_dim: int, coefficients) -> Connection:
    coeff = np.asarray(coefficients, dtype=float).reshape(fiber_dim, base_dim)
    d = base_dim + fiber_dim
    return Connection(base_dim=base_dim, fiber_dim=fiber_dim,
                      gamma=lambda _q: coeff,
                      dgamma=lambda _q: np.zeros((fiber_dim, base_dim, d)),
                      d2gamma=lambda _q: np.zeros((fiber_dim, base_dim, d, d)),
                      constant=True)


@dataclass
class BgPotential:
    """Dual-valued potential absorbing a magnetic form into the momentum map.

    ``values`` maps a tall configuration point to the ``g_dim`` components;
    the defining property (contraction of the magnetic form with each
    generator equals the differential of the matching component) is checked
    by :func:`verify_bg_potential`, not enforced.
    """

    g_dim: int
    values: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-6

    def __call__(self, point) -> np.ndarray:
        out = as_point(self.values(as_point(point)))
        if out.size != self.g_dim:
            raise ValueError("potential has wrong number of components")
        return out

    def jacobian_matrix(self, point) -> np.ndarray:
        point = as_point(point)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(point), dtype=float)
        return numcore.fd_jacobian(self.__call__, point, self.fd_step)


def momentum_map(sys: MagneticLagrangianSystem, action: GroupAction, s,
                 delta: BgPotential | None = None) -> np.ndarray:
    """Pair the fiber derivative with the generators, minus the potential.

    The action may live on the base (``action.dim == n``) or on the tall
    configuration space (``action.dim == n + k``); only the base rows of the
    generators pair with the velocity gradient.
    """
    x = as_state_array(sys.dims, s)
    n, k = sys.dims.n, sys.dims.k
    alpha = sys.lagrangian.gradient(x)[n:2 * n]
    if not np.isfinite(alpha).all():
        raise NonFiniteEvaluation("fiber derivative evaluated to a non-finite value")
    config = sys.config_point(x)
    if action.dim == n:
        sigma_q = action.generator_matrix(x[:n])
    elif action.dim == n + k:
        sigma_q = action.generator_matrix(config)[:n, :]
    else:
        raise ValueError(f"action dimension {action.dim} matches neither base nor total space")
    j = sigma_q.T @ alpha
    if delta is not None:
        j = j - delta(config)
    return j


@dataclass
class GRegularityReport:
    conditions: np.ndarray
    invertible: np.ndarray

    @property
    def g_regular(self) -> bool:
        return bool(np.all(self.invertible))


def check_g_regular(sys: MagneticLagrangianSystem, action: GroupAction,
                    probes: Sequence) -> GRegularityReport:
    """Invertibility of the momentum map in the group directions.

    The relevant Jacobian is the locked-inertia-type matrix: the generator
    matrix contracted on both sides with the velocity Hessian.
    """
    probes = list(probes)
    if not probes:
        raise ValueError("need at least one probe state")
    n = sys.dims.n
    conds, invert = [], []
    for s in probes:
        x = as_state_array(sys.dims, s)
        w = sys.lagrangian.hessian(x)[n:2 * n, n:2 * n]
        if action.dim == n:
            sigma = action.generator_matrix(x[:n])
        else:
            sigma = action.generator_matrix(sys.config_point(x))[:n, :]
        locked = sigma.T @ w @ sigma
        sv = np.linalg.svd(locked, compute_uv=False)
        conds.append(float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf)
        invert.append(sv[-1] > numcore.KERNEL_RTOL * max(sv[0], 1.0))
    return GRegularityReport(conditions=np.array(conds),
                             invertible=np.array(invert, dtype=bool))


def mechanical_connection_coefficients(sys: MagneticLagrangianSystem,
                                       action: GroupAction, q) -> np.ndarray:
    """Fiber-frame coefficients of the kinetic-orthogonal connection at ``q``.

    Requires an SPD velocity Hessian and an action translating designated
    fiber coordinates; the horizontal spaces are orthogonal to the group
    directions in the kinetic metric.
    """
    if action.translation_coords is None:
        raise NotFreeAction("mechanical connection needs designated translation coordinates")
    q = as_point(q)
    n = sys.dims.n
    state = np.concatenate([q, np.zeros(n + sys.dims.k)])
    w = sys.lagrangian.hessian(state)[n:2 * n, n:2 * n]
    eigs = np.linalg.eigvalsh(0.5 * (w + w.T))
    if eigs[0] <= 0:
        raise NotMechanical("velocity Hessian is not positive definite")
    sigma = action.generator_matrix(q)
    locked = sigma.T @ w @ sigma
    # Lie-frame coefficient matrix over all coordinates, then re-expressed
    # against the fiber frame through the generator block.
    lie_frame = np.linalg.solve(locked, sigma.T @ w)
    fiber = list(action.translation_coords)
    base = [i for i in range(n) if i not in fiber]
    sigma_fiber = sigma[fiber, :]
    if abs(np.linalg.det(sigma_fiber)) < 1e-14:
        raise NotFreeAction("generator block on the fiber coordinates is singular")
    return sigma_fiber @ lie_frame[:, base]


def mechanical_connection(sys: MagneticLagrangianSystem, action: GroupAction) -> Connection:
    """Connection object wrapping :func:`mechanical_connection_coefficients`.

    Coefficient derivatives fall back to finite differences; systems with a
    constant kinetic metric can supply exact constant connections directly.
    """
    if action.translation_coords is None:
        raise NotFreeAction("mechanical connection needs designated translation coordinates")
    k_f = len(action.translation_coords)
    base_dim = sys.dims.n - k_f

    def gamma(point):
        return mechanical_connection_coefficients(sys, action, point)

    return Connection(base_dim=base_dim, fiber_dim=k_f, gamma=gamma)


def connection_one_form_mu(conn: Connection, mu, point,
                           action: GroupAction | None = None):
    """Contraction of the connection with a momentum covector.

    Returns the covector over the configuration slots and its exterior
    derivative (exact when coefficient derivatives are exact).  With an
    ``action``, the momentum is first moved to the fiber frame through the
    inverse generator block; without one the frames are identified.
    """
    mu = as_point(mu)
    point = as_point(point)
    m = _fiber_frame_momentum(conn, mu, point, action)

    covector = m @ conn.one_form_coefficients(point)

    def coeffs(y):
        my = _fiber_frame_momentum(conn, mu, y, action)
        return my @ conn.one_form_coefficients(y)

    if conn.dgamma is not None and (action is None or action.translation_coords is not None):
        # Constant frame conversion: d(mu . form) = mu . d(form).
        jac = conn.coefficients_jacobian(point)
        grad = np.zeros((point.size, point.size))  # grad[j, i] = d_j coeffs_i
        grad[:, :conn.base_dim] = np.einsum("a,aij->ji", m, jac)
        dform = grad - grad.T
    else:
        dform = numcore.one_form_exterior_derivative(coeffs, point, conn.fd_step)
    return covector, dform


def _fiber_frame_momentum(conn: Connection, mu, point, action) -> np.ndarray:
    if action is None:
        return as_point(mu)
    fiber = list(range(conn.base_dim, conn.config_dim))
    block = action.fiber_block(as_point(point), fiber)
    if block.shape[0] != block.shape[1]:
        raise NotFreeAction("fiber generator block is not square")
    try:
        inv = np.linalg.inv(block)
    except np.linalg.LinAlgError as exc:
        raise NotFreeAction("fiber generator block is singular") from exc
    return inv.T @ as_point(mu)


def connection_reproduces_generators(conn: Connection, action: GroupAction,
                                     probes: Sequence) -> float:
    """Max defect of the reproducing identity on group directions."""
    fiber = list(range(conn.base_dim, conn.config_dim))
    worst = 0.0
    for point in probes:
        point = as_point(point)
        sigma = action.generator_matrix(point)
        block = action.fiber_block(point, fiber)
        applied = conn.one_form_coefficients(point) @ sigma  # fiber-frame values
        worst = max(worst, float(np.max(np.abs(applied - block))))
    return worst


def verify_bg_potential(magnetic_form, action: GroupAction, delta: BgPotential,
                        probes: Sequence, step: float = 1e-6) -> float:
    """Max violation of the potential's defining identity over the probes.

    For each generator, compares the contraction of the magnetic form with
    the differential of the matching potential component.
    """
    worst = 0.0
    for point in probes:
        point = as_point(point)
        b = numcore.antisymmetrize(magnetic_form(point))
        sigma = action.generator_matrix(point)
        djac = delta.jacobian_matrix(point)
        for b_idx in range(action.g_dim):
            contraction = b.T @ sigma[:, b_idx]  # components of i_xi B
            worst = max(worst, float(np.max(np.abs(contraction - djac[b_idx, :]))))
    return worst


def lagrangian_invariance_defect(sys: MagneticLagrangianSystem,
                                 coords: Sequence[int], probes: Sequence) -> float:
    """Max Lagrangian gradient entry along translated configuration slots."""
    n = sys.dims.n
    slots = [(i if i < n else n + i) for i in coords]  # config index -> state index
    worst = 0.0
    for s in probes:
        x = as_state_array(sys.dims, s)
        g = sys.lagrangian.gradient(x)
        worst = max(worst, float(np.max(np.abs(g[slots]))))
    return worst


def infinitesimal_cocycle(delta: BgPotential, action: GroupAction, point,
                          xi: int, zeta: int) -> float:
    """Infinitesimal non-equivariance 2-cocycle of the potential.

    Evaluates ``-xi_P(delta_zeta) - delta_[xi, zeta]`` at a point; the
    finite group version is deliberately not housed.
    """
    point = as_point(point)
    sigma = action.generator_matrix(point)
    djac = delta.jacobian_matrix(point)
    directional = float(djac[zeta, :] @ sigma[:, xi])
    bracket = action.structure_constants[:, xi, zeta]  # components of [xi, zeta]
    return -directional - float(delta(point) @ bracket)
