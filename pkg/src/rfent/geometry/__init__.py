from .curvature import (
    CurvatureBundle,
    curvature_at,
    flow_residual,
    metric_at,
    min_ricci_eigenvalue,
    ricci_eigenvalues,
)
from .models import ManifoldModel, load_model

__all__ = [
    "CurvatureBundle",
    "ManifoldModel",
    "curvature_at",
    "flow_residual",
    "load_model",
    "metric_at",
    "min_ricci_eigenvalue",
    "ricci_eigenvalues",
]
from .warped import WarpedFlow, evolve_warped, read_profile_csv  # noqa: E402

__all__ += ["WarpedFlow", "evolve_warped", "read_profile_csv"]
