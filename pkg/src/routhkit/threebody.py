"""Three coupled planar rotors: the package's built-in worked example.

Three rigid bodies rotate about a common fixed point; the configuration is
a 3-torus.  Internally the coordinates are ordered ``(phi, psi, theta)``:
``theta`` is the absolute angle of the first body, ``phi`` and ``psi`` the
relative angles of the second and third.  Putting the absolute angle last
makes the rotation symmetry act on the trailing slot, which is the adapted
order every reduction routine expects.  The helpers below accept and
produce the physical ``(theta, phi, psi)`` naming.

The potential couples the relative angles only, keeping the Lagrangian
invariant under the overall rotation::

    V(phi, psi) = c1*cos(phi) + c2*cos(psi) + c3*cos(phi - psi)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lagrangian import BundleDims, MagneticLagrangianSystem
from .hamside import MagneticHamiltonianSystem
from .numcore import DerivativeProvider, as_point
from .symmetry import Connection, GroupAction, translation_action

PHI, PSI, THETA = 0, 1, 2  # internal configuration slots


@dataclass(frozen=True)
class PotentialCoeffs:
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.0


@dataclass(frozen=True)
class ThreeBodyParams:
    """Moments of inertia and potential coefficients."""

    i1: float
    i2: float
    i3: float
    potential: PotentialCoeffs = PotentialCoeffs()

    def __post_init__(self):
        if min(self.i1, self.i2, self.i3) <= 0:
            raise ValueError("moments of inertia must be positive")

    @property
    def total(self) -> float:
        return self.i1 + self.i2 + self.i3


def potential_value(params: ThreeBodyParams, phi: float, psi: float) -> float:
    c = params.potential
    return c.c1 * np.cos(phi) + c.c2 * np.cos(psi) + c.c3 * np.cos(phi - psi)


def potential_gradient(params: ThreeBodyParams, phi: float, psi: float) -> np.ndarray:
    c = params.potential
    return np.array([
        -c.c1 * np.sin(phi) - c.c3 * np.sin(phi - psi),
        -c.c2 * np.sin(psi) + c.c3 * np.sin(phi - psi),
    ])


def potential_hessian(params: ThreeBodyParams, phi: float, psi: float) -> np.ndarray:
    c = params.potential
    cross = c.c3 * np.cos(phi - psi)
    return np.array([
        [-c.c1 * np.cos(phi) - cross, cross],
        [cross, -c.c2 * np.cos(psi) - cross],
    ])


def inertia_matrix(params: ThreeBodyParams) -> np.ndarray:
    """Velocity Hessian in the internal (phi, psi, theta) order."""
    i2, i3 = params.i2, params.i3
    a = i2 + i3
    return np.array([
        [a, i3, a],
        [i3, i3, i3],
        [a, i3, params.total],
    ])


def three_body_state(theta, phi, psi, dtheta, dphi, dpsi) -> np.ndarray:
    """Full state from the physical naming, in internal order."""
    return np.array([phi, psi, theta, dphi, dpsi, dtheta], dtype=float)


def momentum_value(params: ThreeBodyParams, state) -> float:
    """Conserved momentum of the overall rotation, closed form."""
    x = as_point(state)
    a = params.i2 + params.i3
    return float(params.total * x[5] + a * x[3] + params.i3 * x[4])


def velocity_from_momentum(params: ThreeBodyParams, mu: float,
                           dphi: float, dpsi: float) -> float:
    """Absolute-angle rate on a momentum level, solved from the closed form."""
    a = params.i2 + params.i3
    return (mu - a * dphi - params.i3 * dpsi) / params.total


def normal_form_accelerations(params: ThreeBodyParams, state) -> np.ndarray:
    """Closed-form accelerations (dphi', dpsi', dtheta' in internal order),
    obtained by inverting the constant inertia matrix against the potential
    forces."""
    x = as_point(state)
    i1, i2, i3 = params.i1, params.i2, params.i3
    vphi, vpsi = potential_gradient(params, x[PHI], x[PSI])
    ddtheta = vphi / i1
    ddphi = -((i1 + i2) / (i1 * i2)) * vphi + vpsi / i2
    ddpsi = vphi / i2 - ((i2 + i3) / (i2 * i3)) * vpsi
    return np.array([ddphi, ddpsi, ddtheta])


@dataclass
class ThreeBodySetup:
    """Everything the harness needs: system, symmetry and both connections."""

    params: ThreeBodyParams
    system: MagneticLagrangianSystem
    action: GroupAction
    mechanical_connection: Connection
    nonflat_connection: Connection

    def connection(self, name: str) -> Connection:
        if name in ("mechanical", "M"):
            return self.mechanical_connection
        if name in ("A0", "nonflat"):
            return self.nonflat_connection
        raise ValueError(f"unknown connection {name!r}")


def build_three_body(params: ThreeBodyParams, exact_derivatives: bool = True,
                     fd_step: float = 1e-6) -> ThreeBodySetup:
    """Assemble the full system with its rotation action and connections.

    With ``exact_derivatives`` every provider carries closed-form gradients
    and Hessians; switching it off exercises the finite-difference path.
    """
    import math

    w = inertia_matrix(params)
    c1, c2, c3 = params.potential.c1, params.potential.c2, params.potential.c3
    hess_template = np.zeros((6, 6))
    hess_template[3:, 3:] = w

    def value(x):
        v = x[3:]
        return float(0.5 * v @ w @ v) - (c1 * math.cos(x[0]) + c2 * math.cos(x[1])
                                         + c3 * math.cos(x[0] - x[1]))

    def gradient(x):
        g = np.empty(6)
        rel = c3 * math.sin(x[0] - x[1])
        g[0] = c1 * math.sin(x[0]) + rel
        g[1] = c2 * math.sin(x[1]) - rel
        g[2] = 0.0
        g[3:] = w @ x[3:]
        return g

    def hessian(x):
        h = hess_template.copy()
        cross = c3 * math.cos(x[0] - x[1])
        h[0, 0] = c1 * math.cos(x[0]) + cross
        h[1, 1] = c2 * math.cos(x[1]) + cross
        h[0, 1] = h[1, 0] = -cross
        return h

    provider = DerivativeProvider(
        value=value,
        exact_jacobian=gradient if exact_derivatives else None,
        exact_hessian=hessian if exact_derivatives else None,
        fd_step=fd_step,
    )

    c_zero = np.zeros((3, 3))

    def el_terms(x):
        g = np.empty(3)
        rel = c3 * math.sin(x[0] - x[1])
        g[0] = c1 * math.sin(x[0]) + rel
        g[1] = c2 * math.sin(x[1]) - rel
        g[2] = 0.0
        return w, c_zero, g, None

    system = MagneticLagrangianSystem(
        dims=BundleDims(n=3, k=0),
        lagrangian=provider,
        periodic_coords=frozenset({PHI, PSI, THETA}),
        name="three_body",
        el_terms=el_terms if exact_derivatives else None,
    )
    action = translation_action(3, [THETA])

    total = params.total
    gamma_m = np.array([[(params.i2 + params.i3) / total, params.i3 / total]])
    mech = Connection(
        base_dim=2, fiber_dim=1,
        gamma=lambda _q: gamma_m,
        dgamma=(lambda _q: np.zeros((1, 2, 3))) if exact_derivatives else None,
        d2gamma=(lambda _q: np.zeros((1, 2, 3, 3))) if exact_derivatives else None,
        fd_step=fd_step,
        constant=exact_derivatives,
    )

    def gamma_0(q):
        return np.array([[np.cos(as_point(q)[PSI]), 0.0]])

    def dgamma_0(q):
        out = np.zeros((1, 2, 3))
        out[0, 0, PSI] = -np.sin(as_point(q)[PSI])
        return out

    def d2gamma_0(q):
        out = np.zeros((1, 2, 3, 3))
        out[0, 0, PSI, PSI] = -np.cos(as_point(q)[PSI])
        return out

    nonflat = Connection(
        base_dim=2, fiber_dim=1,
        gamma=gamma_0,
        dgamma=dgamma_0 if exact_derivatives else None,
        d2gamma=d2gamma_0 if exact_derivatives else None,
        fd_step=fd_step,
    )
    return ThreeBodySetup(params=params, system=system, action=action,
                          mechanical_connection=mech, nonflat_connection=nonflat)


def build_three_body_cotangent(params: ThreeBodyParams,
                               exact_derivatives: bool = True,
                               fd_step: float = 1e-6) -> MagneticHamiltonianSystem:
    """Cotangent-side twin of the full system (Legendre-transformed)."""
    w_inv = np.linalg.inv(inertia_matrix(params))

    def value(x):
        x = as_point(x)
        alpha = x[3:]
        return float(0.5 * alpha @ w_inv @ alpha + potential_value(params, x[PHI], x[PSI]))

    def gradient(x):
        x = as_point(x)
        g = np.empty(6)
        g[:2] = potential_gradient(params, x[PHI], x[PSI])
        g[2] = 0.0
        g[3:] = w_inv @ x[3:]
        return g

    def hessian(x):
        x = as_point(x)
        h = np.zeros((6, 6))
        h[:2, :2] = potential_hessian(params, x[PHI], x[PSI])
        h[3:, 3:] = w_inv
        return h

    provider = DerivativeProvider(
        value=value,
        exact_jacobian=gradient if exact_derivatives else None,
        exact_hessian=hessian if exact_derivatives else None,
        fd_step=fd_step,
    )
    return MagneticHamiltonianSystem(dims=BundleDims(n=3, k=0),
                                     hamiltonian=provider,
                                     name="three_body_cotangent")
