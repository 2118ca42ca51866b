"""Bayesian additive regression trees with a log-linear heteroskedastic
error variance, fit by Gibbs sampling."""

from .data import Dataset, VarianceDesignSpec, VarianceTerm, load_csv
from .errors import DataError, HBARTError, ModelFileError, NumericalError
from .gibbs import PosteriorDraws, fit, load, save
from .posterior import credible_interval, design_matrix, draw_fits, gamma_summary, predict_mean, predictive_interval, variance_at
from .priors import Hyperparams

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DataError",
    "HBARTError",
    "Hyperparams",
    "ModelFileError",
    "NumericalError",
    "PosteriorDraws",
    "VarianceDesignSpec",
    "VarianceTerm",
    "credible_interval",
    "design_matrix",
    "draw_fits",
    "fit",
    "gamma_summary",
    "load",
    "load_csv",
    "predict_mean",
    "predictive_interval",
    "save",
    "variance_at",
]
