"""Presymplectic solves and pointwise constraint classification.

The constraint classification follows the Gotay-Nester-Hinds algorithm, but
only its first step and only pointwise: each sampled state is tested for
membership in the secondary constraint set.  Computing constraint
submanifolds symbolically is out of scope.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore
from .errors import InconsistentDynamics, NotCompatiblePoints
from .lagrangian import MagneticLagrangianSystem, as_state_array, energy_differential, presymplectic_matrix
from .numcore import as_point

PRIMARY_CONSISTENT = "PRIMARY_CONSISTENT"
SECONDARY_REQUIRED = "SECONDARY_REQUIRED"
UNRESOLVED = "UNRESOLVED"


@dataclass
class PresymplecticPointData:
    """Pointwise data of the contraction equation ``i_X form = -dh``."""

    omega: np.ndarray
    dh: np.ndarray
    kernel_basis: np.ndarray
    consistent: bool


def solve_presymplectic(omega, dh, gauge: dict[int, float] | None = None,
                        require_solution: bool = False):
    """Solve ``i_X omega = -dh`` for X, modulo the kernel of ``omega``.

    With the matrix convention of :mod:`routhkit.numcore` this is the linear
    system ``omega @ x = dh``.  Returns the minimum-norm solution (with any
    ``gauge`` components pinned) and the pointwise data record.  The
    ``consistent`` flag is the primary membership test: the differential
    annihilates the kernel.
    """
    omega = np.asarray(omega, dtype=float)
    dh = as_point(dh)
    res = numcore.constrained_lsq_solve(omega, dh, gauge)
    data = PresymplecticPointData(omega=omega, dh=dh, kernel_basis=res.kernel,
                                  consistent=res.consistent)
    if require_solution and not res.consistent:
        raise InconsistentDynamics("no solution: dh does not annihilate the kernel")
    return res.solution, data


@dataclass
class PointClassification:
    index: int
    label: str
    kernel_dim: int
    pairing: float


@dataclass
class ConstraintReport:
    points: list[PointClassification]
    modal_kernel_dim: int
    all_consistent: bool
    constant_rank: bool

    @property
    def final_constraint_like(self) -> bool:
        """The sampled set behaves like a final constraint set."""
        return self.all_consistent and self.constant_rank


def classify_constraint_points(sys: MagneticLagrangianSystem,
                               states: Sequence) -> ConstraintReport:
    """Classify sampled states by the primary consistency test.

    States whose kernel dimension deviates from the modal value across the
    batch are labelled UNRESOLVED rather than classified; rank changes are
    reported, not resolved.
    """
    records = []
    for i, s in enumerate(states):
        x = as_state_array(sys.dims, s)
        omega = presymplectic_matrix(sys, x)
        de = energy_differential(sys, x)
        kernel = numcore.kernel_basis(omega)
        scale = 1.0 + float(np.max(np.abs(de)))
        pairing = float(np.max(np.abs(kernel.T @ de))) if kernel.shape[1] else 0.0
        consistent = pairing < numcore.CONSISTENCY_RTOL * scale
        records.append((i, kernel.shape[1], pairing, consistent))

    kdims = np.array([r[1] for r in records], dtype=int)
    modal = int(np.bincount(kdims).argmax()) if kdims.size else 0
    points = []
    for i, kdim, pairing, consistent in records:
        if kdim != modal:
            label = UNRESOLVED
        else:
            label = PRIMARY_CONSISTENT if consistent else SECONDARY_REQUIRED
        points.append(PointClassification(index=i, label=label,
                                          kernel_dim=kdim, pairing=pairing))
    return ConstraintReport(
        points=points,
        modal_kernel_dim=modal,
        all_consistent=all(p.label == PRIMARY_CONSISTENT for p in points),
        constant_rank=bool(np.all(kdims == modal)),
    )


def related_vector_defect(pair, s1, s2, y_down, x_up, tol: float = 1e-8):
    """Shared-slot agreement test for vectors at related states.

    ``s1``/``y_down`` live downstairs, ``s2``/``x_up`` upstairs.  The states
    must already be a compatible pair (shared configuration and base
    velocity); the vectors are related when their shared base, fiber and
    velocity slots agree within ``tol``.  Returns ``(related, defect)``.
    """
    x1 = as_point(s1)
    x2 = as_point(s2)
    point_gap = pair.point_compatibility_defect(x1, x2)
    if point_gap > tol:
        raise NotCompatiblePoints(
            f"states differ by {point_gap:.3e} on shared coordinates"
        )
    defect = pair.vector_compatibility_defect(as_point(y_down), as_point(x_up))
    return bool(defect <= tol), float(defect)
