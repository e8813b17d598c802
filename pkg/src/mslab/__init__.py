"""mslab: a desk-scale numerical laboratory for metric surfaces."""

from .metric_core import (
    MetricSurfaceMesh,
    PathPolyline,
    SampledMetricSpace,
    geodesic,
    gromov_product,
    induced_length_metric,
    metric_axioms_check,
)

__version__ = "0.1.0"

__all__ = [
    "MetricSurfaceMesh",
    "PathPolyline",
    "SampledMetricSpace",
    "geodesic",
    "gromov_product",
    "induced_length_metric",
    "metric_axioms_check",
    "__version__",
]
