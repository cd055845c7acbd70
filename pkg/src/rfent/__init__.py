"""Forward reduced entropy of Ricci flow on model flows.

Float64 is switched on for JAX at import; every computation in the package
depends on it.
"""

import jax

jax.config.update("jax_enable_x64", True)

from .errors import (  # noqa: E402
    AdmissibilityError,
    ChartError,
    ConfigurationError,
    CoverageError,
    DomainError,
    IntegrationError,
    NeckDegenerationError,
    NonconvergenceError,
    PreconditionError,
    PropagationError,
    RFEntError,
    StencilError,
    TruncationError,
)
from .geometry import (  # noqa: E402
    CurvatureBundle,
    ManifoldModel,
    curvature_at,
    flow_residual,
    metric_at,
)

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError",
    "ChartError",
    "ConfigurationError",
    "CoverageError",
    "CurvatureBundle",
    "DomainError",
    "IntegrationError",
    "ManifoldModel",
    "NeckDegenerationError",
    "NonconvergenceError",
    "PreconditionError",
    "PropagationError",
    "RFEntError",
    "StencilError",
    "TruncationError",
    "curvature_at",
    "flow_residual",
    "metric_at",
]
