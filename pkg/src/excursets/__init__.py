"""Capacity functionals and boundary-length moments of Gaussian excursion sets."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .capacity2 import capacity_two_segments, cond_integrand
from .capacityk import e_i_of_t, joint_survival_k
from .covariance import GaussianModel, QuadraticGaussianModel, make_model
from .gauss import EstimateWithError, abs_product_moment, mvn_cdf
from .geometry import Disc, KSegmentProblem, Line, Rectangle, TwoSegmentProblem
from .moments import (
    LinePair,
    boundary_length_intensity,
    expected_crossing_product,
    second_moment_measure,
)
from .montecarlo import empirical_capacity, empirical_crossing_product

__all__ = [
    "capacity_two_segments",
    "cond_integrand",
    "e_i_of_t",
    "joint_survival_k",
    "GaussianModel",
    "QuadraticGaussianModel",
    "make_model",
    "EstimateWithError",
    "abs_product_moment",
    "mvn_cdf",
    "Disc",
    "KSegmentProblem",
    "Line",
    "Rectangle",
    "TwoSegmentProblem",
    "LinePair",
    "boundary_length_intensity",
    "expected_crossing_product",
    "second_moment_measure",
    "empirical_capacity",
    "empirical_crossing_product",
]
