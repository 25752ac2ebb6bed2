"""Exception hierarchy shared across the package."""


class RouthkitError(Exception):
    """Base class for all package errors."""


class NonFiniteEvaluation(RouthkitError):
    """A field or derivative evaluated to NaN or infinity."""


class SingularJacobian(RouthkitError):
    """Newton step could not be computed (singular or ill-posed Jacobian)."""


class NoConvergence(RouthkitError):
    """Newton iteration hit the iteration cap.

    Carries the last residual norm in ``residual_norm``.
    """

    def __init__(self, message, residual_norm=None):
        super().__init__(message)
        self.residual_norm = residual_norm


class InconsistentConstraint(RouthkitError):
    """A fixed-component assignment is incompatible with the linear system."""


class InconsistentDynamics(RouthkitError):
    """The point fails the primary consistency test of the constraint
    algorithm: the energy differential does not annihilate the kernel."""


class AmbiguousDynamics(RouthkitError):
    """Dynamics remain undetermined after gauge fixing.

    ``kernel`` holds an orthonormal basis of the residual gauge directions.
    """

    def __init__(self, message, kernel=None):
        super().__init__(message)
        self.kernel = kernel


class TooShortTrajectory(RouthkitError):
    """Trajectory has fewer samples than the differentiation stencil needs."""


class NotCompatiblePoints(RouthkitError):
    """Two states do not share the coordinates a compatible pair must share."""


class NotInImage(RouthkitError):
    """A state does not satisfy the defining condition of the transformation
    image (its fiber velocity does not match the prescribed covector)."""


class NotMechanical(RouthkitError):
    """Velocity Hessian is not symmetric positive definite."""


class NotFreeAction(RouthkitError):
    """Generator matrix is singular where it must be invertible."""


class NotReducible(RouthkitError):
    """A fiberwise invariance condition fails beyond tolerance."""


class NotInvariant(RouthkitError):
    """The Lagrangian is not invariant under the supplied group action."""


class ConfigError(RouthkitError):
    """A scenario configuration violates the schema."""
