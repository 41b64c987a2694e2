"""Distributionally-weighted least squares for confirmatory factor models."""

from .estimation import FitOptions, FitResult, Method, fit
from .fitstats import FitStatistics, fit_statistics
from .inference import SeResult, standard_errors
from .model import ModelSpec, holzinger_spec
from .moments import MomentSet

from ._version import __version__

__all__ = [
    "FitOptions", "FitResult", "FitStatistics", "Method", "ModelSpec", "MomentSet",
    "SeResult", "fit", "fit_statistics", "holzinger_spec", "standard_errors", "__version__",
]
