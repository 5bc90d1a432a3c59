"""hyperlab: intrinsic hyperboloidal foliations of static spacetimes, at desk scale."""

__version__ = "0.1.0"

from .metric import MetricModel, MetricJet, metric_at, curvature_at, schouten_scalar_field

__all__ = [
    "MetricModel",
    "MetricJet",
    "metric_at",
    "curvature_at",
    "schouten_scalar_field",
    "__version__",
]
