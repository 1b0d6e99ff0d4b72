"""Hausdorff contents, n-densities and normal-form charts for sampled Lipschitz maps."""

__version__ = "0.1.0"

from .chart import Chart, DetectedSet, build_chart, select_minor, verify_normal_form
from .content import ContentEstimate, content_estimate, content_greedy, content_oracle_exact
from .density import DensityProfile, LadderSpec, density_field, density_profile
from .gallery import MapSpec, gallery_spec, make_map
from .jacobian import approx_derivative, jacobian_n
from .metric import MetricSpace, SampledMap
from .partition import nm_content_dyadic

__all__ = [
    "Chart", "ContentEstimate", "DensityProfile", "DetectedSet", "LadderSpec", "MapSpec", "MetricSpace",
    "SampledMap", "approx_derivative", "build_chart", "content_estimate", "content_greedy",
    "content_oracle_exact", "density_field", "density_profile", "gallery_spec", "jacobian_n",
    "make_map", "nm_content_dyadic", "select_minor", "verify_normal_form",
]
