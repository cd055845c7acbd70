"""Exception hierarchy shared by all modules."""


class RFEntError(Exception):
    """Base class for all package errors."""


class DomainError(RFEntError):
    """Time outside the existence interval [0, T_max) of the flow."""

    def __init__(self, t, t_max):
        self.t = t
        self.t_max = t_max
        super().__init__(f"time {t!r} outside flow existence interval [0, {t_max!r})")


class ChartError(RFEntError):
    """Point outside the chart domain of a model."""


class ConfigurationError(RFEntError):
    """Invalid model, scheme, mesh or experiment configuration."""


class AdmissibilityError(RFEntError):
    """Path is not admissible for the forward length (blow-up at eta=0)."""


class IntegrationError(RFEntError):
    """ODE integration failed (step-size underflow or step budget exhausted)."""


class TruncationError(RFEntError):
    """Geodesic left the chart or the flow domain before the requested time."""

    def __init__(self, message, exit_time):
        self.exit_time = exit_time
        super().__init__(f"{message} (exit at t={exit_time:.12g})")


class NonconvergenceError(RFEntError):
    """Root finding for the inverse exponential map failed."""

    def __init__(self, message, best=None, residual=None):
        self.best = best
        self.residual = residual
        super().__init__(f"{message}; best residual {residual!r}")


class PropagationError(RFEntError):
    """Jacobi or transport system blew up; carries the last valid time."""

    def __init__(self, message, last_time):
        self.last_time = last_time
        super().__init__(f"{message} (last valid t={last_time!r})")


class NeckDegenerationError(RFEntError):
    """Warping function reached zero in the interior during the warped flow."""

    def __init__(self, t):
        self.t = t
        super().__init__(f"warping function degenerated at t={t:.6g}; flow stopped")


class CoverageError(RFEntError):
    """Too many quadrature nodes failed to produce a geodesic."""


class StencilError(RFEntError):
    """Finite-difference stencil left the chart."""


class PreconditionError(RFEntError):
    """A certified precondition of a check (e.g. a Ricci lower bound) failed."""
