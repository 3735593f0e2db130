"""Exception types shared across the solver."""


class IBFlowError(Exception):
    """Base class for all solver errors."""


class ConfigurationError(IBFlowError):
    """Invalid case setup: bad box/spacing combination, malformed config, bad band."""


class SurfaceError(IBFlowError):
    """Surface load or validity failure (non-manifold edge, open boundary, ...)."""


class CouplingError(IBFlowError):
    """A Lagrangian point's kernel support touches a missing or inactive node."""


class SingularSystemError(IBFlowError):
    """A linear system is singular to working precision."""


class SolverConvergenceError(IBFlowError):
    """An iterative solver failed to reach its tolerance."""
