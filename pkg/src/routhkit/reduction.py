"""Fiberwise quotients and the two-step realization of Routh reduction.

Step 1 transforms an invariant system on the group-extended configuration
space into an equivalent system fibered over the quotient base, using the
compatible transformation whose target covector encodes the momentum level.
Step 2 quotients the leftover fiber symmetry by simply dropping the
translated coordinates.  Quotients are implemented only for actions that
translate designated coordinates; anything else is rejected.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from . import numcore
from .errors import NotFreeAction, NotInvariant, NotReducible
from .integrators import Trajectory
from .lagrangian import (
    BundleDims,
    MagneticLagrangianSystem,
    as_state_array,
    el_residual,
)
from .numcore import DerivativeProvider, as_point
from .symmetry import (
    BgPotential,
    Connection,
    GroupAction,
    lagrangian_invariance_defect,
    translation_action,
)
from .transform import (
    CompatibleTransformation,
    MomentumTarget,
    TransformationPair,
    apply_transformation,
    induced_system,
    momentum_target_from_level,
)

INVARIANCE_TOL = 1e-10
FORM_CONTRACTION_TOL = 1e-10
FORM_INVARIANCE_TOL = 1e-5


@dataclass
class FiberwiseAction:
    """A group action translating some of the fiber coordinates.

    ``dropped`` indexes into the fiber part of the state (the coordinates
    removed by the quotient).  Generators of the underlying action must
    vanish on base slots, which holds by construction here.
    """

    action: GroupAction
    dropped: tuple[int, ...]

    def __post_init__(self):
        self.dropped = tuple(int(i) for i in self.dropped)
        if len(set(self.dropped)) != len(self.dropped):
            raise ValueError("dropped fiber indices must be distinct")

    def reduced_dims(self, dims: BundleDims) -> BundleDims:
        return BundleDims(dims.n, dims.k - len(self.dropped))


def fiberwise_action(dims: BundleDims, dropped: Sequence[int]) -> FiberwiseAction:
    """Translation action on the given fiber coordinates of a system."""
    dropped = tuple(int(i) for i in dropped)
    for i in dropped:
        if not 0 <= i < dims.k:
            raise ValueError(f"fiber index {i} out of range for k={dims.k}")
    config_coords = tuple(dims.n + i for i in dropped)
    return FiberwiseAction(
        action=translation_action(dims.config_dim, config_coords),
        dropped=dropped,
    )


@dataclass
class ReducibilityReport:
    lagrangian_defect: float
    contraction_defect: float
    invariance_defect: float

    def ok(self) -> bool:
        return (self.lagrangian_defect < INVARIANCE_TOL
                and self.contraction_defect < FORM_CONTRACTION_TOL
                and self.invariance_defect < FORM_INVARIANCE_TOL)


def check_fiberwise_reducible(sys: MagneticLagrangianSystem, fa: FiberwiseAction,
                              probes: Sequence) -> ReducibilityReport:
    """Probe the three quotient conditions: invariant Lagrangian, form
    contraction along generators, form invariance along the dropped slots."""
    n = sys.dims.n
    config_coords = [n + i for i in fa.dropped]
    lag_defect = lagrangian_invariance_defect(sys, config_coords, probes)

    contraction = 0.0
    invariance = 0.0
    step = np.sqrt(sys.lagrangian.fd_step)
    for s in probes:
        x = as_state_array(sys.dims, s)
        point = sys.config_point(x)
        b = sys.magnetic_matrix(point)
        sigma = fa.action.generator_matrix(point)
        contraction = max(contraction, float(np.max(np.abs(b @ sigma))) if sigma.size else 0.0)
        for c in config_coords:
            pp, pm = point.copy(), point.copy()
            pp[c] += step
            pm[c] -= step
            diff = (sys.magnetic_matrix(pp) - sys.magnetic_matrix(pm)) / (2 * step)
            invariance = max(invariance, float(np.max(np.abs(diff))))
    return ReducibilityReport(lagrangian_defect=lag_defect,
                              contraction_defect=contraction,
                              invariance_defect=invariance)


def verify_fiber_form_invariance(form, action: GroupAction, probes: Sequence,
                                 step: float = 1e-3) -> tuple[float, float]:
    """Contraction and invariance defects of a 2-form along the generators.

    Returns ``(max |i_xi form|, max directional derivative)`` over the
    probes and generator basis.
    """
    contraction = 0.0
    invariance = 0.0
    for p in probes:
        p = as_point(p)
        b = numcore.antisymmetrize(form(p))
        sigma = action.generator_matrix(p)
        if sigma.size:
            contraction = max(contraction, float(np.max(np.abs(b.T @ sigma))))
        for col in range(action.g_dim):
            direction = sigma[:, col]
            diff = (numcore.antisymmetrize(form(p + step * direction))
                    - numcore.antisymmetrize(form(p - step * direction))) / (2 * step)
            invariance = max(invariance, float(np.max(np.abs(diff))))
    return contraction, invariance


def _embed_state(dims: BundleDims, dropped: tuple[int, ...], x_red: np.ndarray) -> np.ndarray:
    n = dims.n
    p = np.zeros(dims.k)
    kept = [i for i in range(dims.k) if i not in dropped]
    p[kept] = x_red[2 * n:]
    return np.concatenate([x_red[:2 * n], p])


def fiberwise_reduce(sys: MagneticLagrangianSystem, fa: FiberwiseAction,
                     probes: Sequence | None = None, seed: int = 0,
                     validate: bool = True) -> MagneticLagrangianSystem:
    """Quotient a fiberwise-symmetric system by dropping translated slots.

    The reduced Lagrangian and magnetic form evaluate the originals at the
    zero representative of the dropped coordinates; exactness of derivative
    providers is preserved.  Validation probes reject systems that fail any
    invariance condition.
    """
    dims = sys.dims
    dropped = fa.dropped
    for i in dropped:
        if not 0 <= i < dims.k:
            raise ValueError(f"dropped index {i} out of range for k={dims.k}")
    if validate:
        if probes is None:
            rng = np.random.default_rng(seed)
            probes = rng.uniform(-1.0, 1.0, size=(20, dims.state_dim))
        report = check_fiberwise_reducible(sys, fa, probes)
        if not report.ok():
            raise NotReducible(
                "fiberwise invariance violated: "
                f"lagrangian {report.lagrangian_defect:.3e}, "
                f"contraction {report.contraction_defect:.3e}, "
                f"form invariance {report.invariance_defect:.3e}"
            )

    red_dims = fa.reduced_dims(dims)
    n = dims.n
    kept = [i for i in range(dims.k) if i not in dropped]
    keep_state = np.array(list(range(2 * n)) + [2 * n + i for i in kept], dtype=int)
    keep_config = np.array(list(range(n)) + [n + i for i in kept], dtype=int)
    state_grid = np.ix_(keep_state, keep_state)
    config_grid = np.ix_(keep_config, keep_config)

    def embed(x_red):
        x_red = as_state_array(red_dims, x_red)
        full = np.zeros(dims.state_dim)
        full[keep_state] = x_red
        return full

    def value(x_red):
        return float(sys.lagrangian(embed(x_red)))

    exact_grad = None
    exact_hess = None
    if sys.lagrangian.exact_jacobian is not None:
        def exact_grad(x_red):
            return sys.lagrangian.gradient(embed(x_red))[keep_state]
    if sys.lagrangian.exact_hessian is not None:
        def exact_hess(x_red):
            return sys.lagrangian.hessian(embed(x_red))[state_grid]

    def magnetic(point_red):
        point_red = as_point(point_red)
        full = np.zeros(dims.config_dim)
        full[keep_config] = point_red
        b = sys.magnetic_matrix(full)
        return b[config_grid]

    provider = DerivativeProvider(value=value, exact_jacobian=exact_grad,
                                  exact_hessian=exact_hess,
                                  fd_step=sys.lagrangian.fd_step)
    config_positions = {int(c): pos for pos, c in enumerate(keep_config)}
    periodic = frozenset(
        config_positions[i] for i in sys.periodic_coords if i in config_positions
    )
    # The solve blocks live on base slots only, so the parent hook restricts
    # to the quotient by plain embedding.
    el_terms = None
    if sys.el_terms is not None:
        def el_terms(x_red):
            return sys.el_terms(embed(x_red))

    return MagneticLagrangianSystem(
        dims=red_dims, lagrangian=provider,
        magnetic_form=magnetic if sys.magnetic_form is not None else None,
        periodic_coords=periodic,
        name=(sys.name + "_reduced") if sys.name else "reduced",
        el_terms=el_terms,
    )


def quotient_projection_defect(sys: MagneticLagrangianSystem,
                               reduced: MagneticLagrangianSystem,
                               fa: FiberwiseAction, probes: Sequence) -> dict[str, float]:
    """Pullback and commutation defects of the quotient projection.

    Checks that the reduced 2-form and energy pull back to the originals
    and that the quotient commutes with the fiber derivative.
    """
    from .lagrangian import energy, fiber_derivative, presymplectic_matrix

    dims = sys.dims
    n = dims.n
    kept = [i for i in range(dims.k) if i not in fa.dropped]
    keep_state = list(range(2 * n)) + [2 * n + i for i in kept]
    form_defect = energy_defect = legendre_defect = 0.0
    for s in probes:
        x = as_state_array(dims, s)
        x_red = x[keep_state]
        jac = np.zeros((reduced.dims.state_dim, dims.state_dim))
        for r, c in enumerate(keep_state):
            jac[r, c] = 1.0
        omega = presymplectic_matrix(sys, x)
        omega_red = presymplectic_matrix(reduced, x_red)
        form_defect = max(form_defect, float(np.max(np.abs(jac.T @ omega_red @ jac - omega))))
        energy_defect = max(energy_defect, abs(energy(sys, x) - energy(reduced, x_red)))
        legendre_defect = max(legendre_defect, float(np.max(np.abs(
            fiber_derivative(sys, x) - fiber_derivative(reduced, x_red)))))
    return {"form": form_defect, "energy": energy_defect, "legendre": legendre_defect}


@dataclass
class RouthResult:
    """Both stages of the reduction with the data used to build them."""

    pair: TransformationPair
    transformation: CompatibleTransformation
    intermediate: MagneticLagrangianSystem
    fiberwise: FiberwiseAction
    reduced: MagneticLagrangianSystem
    mu: np.ndarray
    connection: Connection
    delta: BgPotential | None = None


def routh_reduce(full_sys: MagneticLagrangianSystem, action: GroupAction, mu,
                 conn: Connection, delta: BgPotential | None = None,
                 isotropy: Sequence[int] | None = None,
                 seed: int = 0, validate: bool = True) -> RouthResult:
    """Reduce an invariant system: momentum-matching transformation, then
    a fiberwise quotient by the isotropy directions.

    The system must live on its configuration space directly (no extra
    fibers) with the group coordinates trailing: ``action`` has to translate
    exactly the last ``g_dim`` coordinates.  ``isotropy`` selects the
    generator indices quotiented in the second step; the default takes all
    of them, which is exact for Abelian groups.
    """
    if full_sys.dims.k != 0:
        raise ValueError("the starting system must have no extra fiber coordinates")
    n = full_sys.dims.n
    g = action.g_dim
    if action.translation_coords is None:
        raise NotFreeAction("quotients need designated translation coordinates")
    if tuple(action.translation_coords) != tuple(range(n - g, n)):
        raise ValueError(
            "group coordinates must be the trailing configuration slots; "
            "reorder the system into adapted coordinates first"
        )
    mu = as_point(mu)

    if validate:
        rng = np.random.default_rng(seed)
        probes = rng.uniform(-1.0, 1.0, size=(20, full_sys.dims.state_dim))
        defect = lagrangian_invariance_defect(full_sys, list(action.translation_coords), probes)
        if defect > INVARIANCE_TOL:
            raise NotInvariant(f"Lagrangian varies along the group directions ({defect:.3e})")

    pair = TransformationPair(
        dims1=BundleDims(n - g, g),
        dims2=full_sys.dims,
        k_f=g,
        k_F=0,
    )
    target = momentum_target_from_level(action, mu, delta)
    ct = CompatibleTransformation(pair=pair, source=full_sys, target=target,
                                  connection=conn)
    # Adapted coordinates keep the configuration order, so periodicity
    # flags carry over unchanged to the intermediate stage.
    periodic = frozenset(full_sys.periodic_coords)
    intermediate = induced_system(ct, periodic_coords=periodic,
                                  name=(full_sys.name or "system") + "_step1")

    drop = tuple(range(g)) if isotropy is None else tuple(int(i) for i in isotropy)
    fa = fiberwise_action(intermediate.dims, drop)
    reduced = fiberwise_reduce(intermediate, fa, seed=seed, validate=validate)
    return RouthResult(pair=pair, transformation=ct, intermediate=intermediate,
                       fiberwise=fa, reduced=reduced, mu=mu, connection=conn,
                       delta=delta)


def reduced_initial_condition(rr: RouthResult, full_state) -> np.ndarray:
    """Project a full state on the momentum level to reduced coordinates."""
    x = as_state_array(rr.pair.dims2, full_state)
    n1 = rr.pair.n1
    n2 = rr.pair.n2
    return np.concatenate([x[:n1], x[n2:n2 + n1]])


def full_initial_condition(rr: RouthResult, reduced_state, group_coords) -> np.ndarray:
    """Complete a reduced state to the full space on the momentum level.

    Group coordinates come from the caller; group velocities solve the
    momentum condition.
    """
    x_red = as_state_array(rr.reduced.dims, reduced_state)
    n1 = rr.pair.n1
    s1 = np.concatenate([x_red[:n1], x_red[n1:2 * n1], as_point(group_coords)])
    return apply_transformation(rr.transformation, s1)


def reconstruct(rr: RouthResult, reduced_traj: Trajectory, initial_group_coords,
                validate_residual: float | None = 1e-4) -> Trajectory:
    """Rebuild the dropped group coordinates along a reduced trajectory.

    Group velocities solve the momentum condition pointwise; the group
    coordinates then integrate by cumulative Simpson quadrature, matching
    the fourth-order accuracy of the integrator.  Only targets independent
    of the group coordinates are supported (translation actions with a
    group-independent potential shift), which keeps the completion a pure
    quadrature rather than a coupled differential equation.
    """
    if rr.delta is not None:
        raise NotImplementedError(
            "reconstruction with a configuration-dependent momentum shift "
            "requires integrating the group coordinates as a coupled system"
        )
    if validate_residual is not None:
        report = el_residual(rr.reduced, reduced_traj)
        if report.max_residual > validate_residual:
            raise NotReducible(
                f"reduced trajectory violates its own dynamics "
                f"(residual {report.max_residual:.3e})"
            )

    pair = rr.pair
    n1, g = pair.n1, pair.k_f
    states = np.asarray(reduced_traj.states, dtype=float)
    count = states.shape[0]
    vbar = np.empty((count, g))
    for i in range(count):
        s1 = np.concatenate([states[i, :n1], states[i, n1:2 * n1], np.zeros(g)])
        x2 = apply_transformation(rr.transformation, s1)
        vbar[i] = pair.split_up(x2)[3]

    h = reduced_traj.step
    coords = as_point(initial_group_coords) + cumulative_simpson(vbar, dx=h, axis=0, initial=0.0)

    full = np.empty((count, rr.pair.dims2.state_dim))
    full[:, :n1] = states[:, :n1]
    full[:, n1:n1 + g] = coords
    full[:, n1 + g:2 * n1 + g] = states[:, n1:2 * n1]
    full[:, 2 * n1 + g:] = vbar
    return Trajectory(times=reduced_traj.times.copy(), states=full,
                      system_id=(rr.transformation.source.name or "full") + "_reconstructed",
                      momentum_tag=rr.mu.copy())
