"""Numerical toolkit for stable solutions of semilinear fractional equations."""

from .special import condition_exponential, condition_power, singular_lambda, threshold_n
from .fracops import TraceFunction, frac_laplacian_point, l1s_norm, hs_seminorm
from .extension import extend_poisson, solve_extension, dtn
from .stability import rayleigh_min, stability_form, LogPolarProbe, OperatorProbe
from .gelfand import minimal_branch, detect_lambda_star, extremal_estimate

__version__ = "0.1.0"

__all__ = [
    "condition_exponential", "condition_power", "singular_lambda", "threshold_n",
    "TraceFunction", "frac_laplacian_point", "l1s_norm", "hs_seminorm",
    "extend_poisson", "solve_extension", "dtn",
    "rayleigh_min", "stability_form", "LogPolarProbe", "OperatorProbe",
    "minimal_branch", "detect_lambda_star", "extremal_estimate",
]
