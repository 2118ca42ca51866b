"""Point predictions, credible and predictive intervals from retained draws."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import DataError
from .gibbs import PosteriorDraws
from .samplers import EXPONENT_LIMIT


def _check_level(level: float) -> None:
    if not 0 < level < 1:
        raise DataError(f"interval level must lie in (0, 1), got {level}")


def _query_matrix(draws: PosteriorDraws, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if len(draws.x_names) == 1 else X[None, :]
    if X.ndim != 2 or X.shape[1] != len(draws.x_names):
        raise DataError(f"query has {X.shape[-1]} columns, model expects {len(draws.x_names)}")
    return X


def _bounds(level: float) -> tuple[float, float]:
    return (1 - level) / 2, (1 + level) / 2


def draw_fits(draws: PosteriorDraws, X) -> np.ndarray:
    """f(x) for every retained draw, on the original response scale.

    Returns an array of shape ``(n_draws, n_query)``.
    """
    X = _query_matrix(draws, X)
    return draws.scaling.unscale(draws.forest.predict(X))


def predict_mean(draws: PosteriorDraws, X) -> np.ndarray:
    """Posterior mean of f at each query row."""
    return draw_fits(draws, X).mean(axis=0)


def credible_interval(draws: PosteriorDraws, X, level: float = 0.9) -> np.ndarray:
    """Equal-tailed credible interval for f at each query row.

    Parameters
    ----------
    draws : PosteriorDraws
    X : array_like, shape (q, p)
    level : float
        Nominal coverage; 0.9 gives the 5% and 95% quantiles.

    Returns
    -------
    ndarray, shape (q, 2)
        Columns ``lo`` and ``hi``.
    """
    _check_level(level)
    if len(draws) < 2:
        raise DataError("credible intervals need at least 2 retained draws")
    F = draw_fits(draws, X)
    return np.quantile(F, _bounds(level), axis=0).T


def design_matrix(draws: PosteriorDraws, X=None, columns: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
    """Variance design for query rows, using the training basis.

    ``columns`` supplies any named variance terms that are not mean-model
    predictors. Without a stored basis, Z is taken to be X.
    """
    if draws.basis is None:
        if X is None:
            raise DataError("model has no stored variance basis; pass Z directly")
        return _query_matrix(draws, X)
    named = {}
    if X is not None:
        X = _query_matrix(draws, X)
        named = {name: X[:, j] for j, name in enumerate(draws.x_names)}
    if columns:
        named.update(columns)
    return draws.basis.transform(X, named)


def variance_at(draws: PosteriorDraws, Z) -> np.ndarray:
    """Per-draw error variance at each query row, original response scale.

    Returns shape ``(n_draws, n_query)``. Exponents are clamped to +-700.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[1] != draws.gamma.shape[1]:
        raise DataError(f"Z has {Z.shape[1]} columns, model expects {draws.gamma.shape[1]}")
    log_v = np.log(draws.sigma_sq)[:, None] + draws.gamma @ Z.T
    return np.exp(np.clip(log_v, -EXPONENT_LIMIT, EXPONENT_LIMIT)) * draws.scaling.width**2


def predictive_interval(
    draws: PosteriorDraws,
    X,
    Z,
    level: float = 0.9,
    reps: int = 1000,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Monte Carlo predictive interval for a new response at each query row.

    Each of ``reps`` replicates picks a retained draw uniformly with
    replacement, takes f(x) and the error variance from that same draw and
    adds one normal variate.

    Returns
    -------
    ndarray, shape (q, 2)
    """
    _check_level(level)
    if reps < 100:
        raise DataError("reps must be at least 100")
    rng = np.random.default_rng(rng)
    F = draw_fits(draws, X)
    V = variance_at(draws, Z)
    if V.shape != F.shape:
        raise DataError("X and Z must have the same number of rows")
    q = F.shape[1]
    idx = rng.integers(len(draws), size=(reps, q))
    cols = np.arange(q)
    sims = F[idx, cols] + np.sqrt(V[idx, cols]) * rng.standard_normal((reps, q))
    return np.quantile(sims, _bounds(level), axis=0).T


def gamma_summary(draws: PosteriorDraws, level: float = 0.9) -> np.ndarray:
    """Mean and equal-tailed interval of each variance coefficient.

    Returns shape ``(k, 3)`` with columns mean, lo, hi.
    """
    _check_level(level)
    g = draws.gamma
    lo, hi = np.quantile(g, _bounds(level), axis=0)
    return np.column_stack([g.mean(axis=0), lo, hi])
