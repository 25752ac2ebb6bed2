"""Fixed-step integrators and the trajectory container."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore
from .errors import AmbiguousDynamics, InconsistentDynamics
from .lagrangian import MagneticLagrangianSystem, as_state_array, el_vector_field


@dataclass
class Trajectory:
    """Uniformly sampled states with provenance metadata."""

    times: np.ndarray
    states: np.ndarray
    system_id: str = ""
    momentum_tag: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or self.states.ndim != 2:
            raise ValueError("times must be 1-d and states 2-d")
        if self.times.size != self.states.shape[0]:
            raise ValueError("times and states disagree in length")
        if self.times.size >= 2:
            h = self.times[1] - self.times[0]
            if h <= 0 or np.max(np.abs(np.diff(self.times) - h)) > 1e-12 * max(1.0, abs(h)):
                raise ValueError("time steps must be uniform and increasing")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("non-finite states")

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size >= 2 else 0.0

    def __len__(self) -> int:
        return int(self.times.size)


def _steps_for(h: float, horizon: float) -> int:
    if h <= 0:
        raise ValueError("step must be positive")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    steps = int(round(horizon / h))
    if steps < 1:
        raise ValueError("horizon shorter than one step")
    return steps


def integrate_rk4(sys: MagneticLagrangianSystem, s0, h: float, horizon: float,
                  system_id: str | None = None) -> Trajectory:
    """Classical fixed-step fourth-order Runge-Kutta on the gauge-fixed
    dynamics.  Degenerate or inconsistent points abort with the failing
    time attached."""
    x = as_state_array(sys.dims, s0).copy()
    steps = _steps_for(h, horizon)
    out = np.empty((steps + 1, x.size))
    out[0] = x
    t = 0.0

    def rhs(state, when):
        try:
            return el_vector_field(sys, state, require_unique=True)[0]
        except (AmbiguousDynamics, InconsistentDynamics) as exc:
            raise type(exc)(f"{exc} (at t={when:.6g})") from exc

    for i in range(steps):
        k1 = rhs(x, t)
        k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
        out[i + 1] = x
    times = h * np.arange(steps + 1)
    return Trajectory(times=times, states=out,
                      system_id=system_id if system_id is not None else sys.name)


def integrate_implicit_midpoint(sys: MagneticLagrangianSystem, s0, h: float,
                                horizon: float, system_id: str | None = None,
                                tol: float = 1e-12) -> Trajectory:
    """Implicit midpoint rule, useful for long-horizon energy behaviour.

    Each step solves its stage equation by Newton with a finite-difference
    Jacobian; much slower than RK4 and second order, same contract.
    """
    x = as_state_array(sys.dims, s0).copy()
    steps = _steps_for(h, horizon)
    out = np.empty((steps + 1, x.size))
    out[0] = x

    def field(state):
        return el_vector_field(sys, state, require_unique=True)[0]

    for i in range(steps):
        xi = x

        def residual(y):
            return y - xi - h * field(0.5 * (xi + y))

        def jac(y):
            return numcore.fd_jacobian(residual, y, 1e-7)

        guess = x + h * field(x)
        x = numcore.newton_solve(residual, jac, guess, tol=tol, max_iter=50)
        out[i + 1] = x
    times = h * np.arange(steps + 1)
    return Trajectory(times=times, states=out,
                      system_id=system_id if system_id is not None else sys.name)
