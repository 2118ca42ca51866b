"""Conditional draws for leaf values, the global variance and the
log-linear variance coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError

# exponent clamp used only while building the gamma proposal mean
PROPOSAL_CLAMP = 50.0
# proposals whose linear predictor leaves this range are rejected outright
EXPONENT_LIMIT = 700.0


@dataclass
class VarianceState:
    """Global variance, variance coefficients and the implied per-row variances.

    ``sigma_sq_i[i] = sigma_sq * exp(Z[i] @ gamma)``; always rebuild through
    :meth:`update` so the three stay consistent.
    """

    sigma_sq: float
    gamma: np.ndarray
    sigma_sq_i: np.ndarray

    @classmethod
    def build(cls, sigma_sq: float, gamma, Z: np.ndarray) -> VarianceState:
        gamma = np.array(gamma, dtype=float)
        return cls(float(sigma_sq), gamma, sigma_sq * np.exp(Z @ gamma))

    def update(self, Z: np.ndarray, sigma_sq: float | None = None, gamma=None):
        if sigma_sq is not None:
            self.sigma_sq = float(sigma_sq)
        if gamma is not None:
            self.gamma = np.array(gamma, dtype=float)
        self.sigma_sq_i = self.sigma_sq * np.exp(Z @ self.gamma)

    @property
    def log_sigma_sq_i(self) -> np.ndarray:
        return np.log(self.sigma_sq_i)


class GammaProposalContext:
    """Proposal covariance ``B = (Sigma^-1 + Z'Z / 2)^-1`` and its factors.

    Depends only on Z and the prior variances, so it is built once per fit.
    """

    def __init__(self, Z: np.ndarray, Sigma_diag):
        Sigma_diag = np.asarray(Sigma_diag, dtype=float)
        self.precision = np.diag(1.0 / Sigma_diag) + 0.5 * Z.T @ Z
        self.precision = 0.5 * (self.precision + self.precision.T)
        self._cho = cho_factor(self.precision, lower=True)
        self.B = cho_solve(self._cho, np.eye(Z.shape[1]))
        self.B = 0.5 * (self.B + self.B.T)
        self.chol_B = np.linalg.cholesky(self.B)

    def solve(self, v: np.ndarray) -> np.ndarray:
        return cho_solve(self._cho, v)

    def mahalanobis(self, d: np.ndarray) -> float:
        """``d' B^-1 d``."""
        return float(d @ self.precision @ d)


def leaf_posterior(S, T, sigma_mu_sq: float):
    """Mean and variance of a leaf value given precision total ``S`` and
    precision-weighted residual total ``T``."""
    var = 1.0 / (1.0 / sigma_mu_sq + S)
    return T * var, var


def draw_leaf_mu(R, sigma_sq, sigma_mu_sq: float, rng: np.random.Generator) -> float:
    prec = 1.0 / np.asarray(sigma_sq, dtype=float)
    mean, var = leaf_posterior(prec.sum(), np.asarray(R, dtype=float) @ prec, sigma_mu_sq)
    return float(mean + math.sqrt(var) * rng.standard_normal())


def sigma_sq_posterior(eps, gamma, Z, nu: float, lam: float) -> tuple[float, float]:
    """Shape and scale of the inverse-gamma full conditional of sigma^2."""
    eps = np.asarray(eps, dtype=float)
    shape = 0.5 * (nu + eps.size)
    if eps.size == 0:
        return shape, 0.5 * nu * lam
    weighted = np.exp(-(Z @ np.asarray(gamma, dtype=float))) @ (eps * eps)
    scale = 0.5 * (nu * lam + weighted)
    if not math.isfinite(scale):
        raise NumericalError("sigma^2 posterior scale overflowed")
    return shape, scale


def draw_sigma_sq(eps, gamma, Z, nu: float, lam: float, rng: np.random.Generator) -> float:
    shape, scale = sigma_sq_posterior(eps, gamma, Z, nu, lam)
    return scale / rng.gamma(shape)


def gamerman_proposal_params(gamma, eps, sigma_sq: float, Z, gamma0, Sigma_diag, ctx: GammaProposalContext):
    """Mean ``a(gamma)`` and covariance ``B`` of the one-step IRLS proposal.

    Working response ``w_i = z_i'gamma + eps_i^2 / (sigma^2 exp(z_i'gamma)) - 1``
    with unit weights one half.
    """
    eta = Z @ gamma
    w = eta + (eps * eps) * np.exp(-np.clip(eta, -PROPOSAL_CLAMP, PROPOSAL_CLAMP)) / sigma_sq - 1.0
    if not np.all(np.isfinite(w)):
        raise NumericalError("non-finite working response in gamma proposal")
    rhs = np.asarray(gamma0, dtype=float) / np.asarray(Sigma_diag, dtype=float) + 0.5 * Z.T @ w
    return ctx.solve(rhs), ctx.B


def gamma_log_posterior(gamma, eps, sigma_sq: float, Z, gamma0, Sigma_diag) -> float:
    """Log full conditional of gamma, up to an additive constant."""
    eta = Z @ gamma
    d = np.asarray(gamma, dtype=float) - np.asarray(gamma0, dtype=float)
    return float(-0.5 * (eta.sum() + (eps * eps) @ np.exp(-eta) / sigma_sq + d @ (d / np.asarray(Sigma_diag))))


def gamma_log_ratio(gamma, gamma_star, eps, sigma_sq, Z, gamma0, Sigma_diag, ctx, a=None, a_star=None) -> float:
    """log MH ratio for moving gamma -> gamma_star.

    ``log q(gamma | gamma_star) - log q(gamma_star | gamma)`` plus the
    difference in log posterior; the Gaussian normalizers cancel because
    B does not depend on gamma.
    """
    if a is None:
        a, _ = gamerman_proposal_params(gamma, eps, sigma_sq, Z, gamma0, Sigma_diag, ctx)
    if a_star is None:
        a_star, _ = gamerman_proposal_params(gamma_star, eps, sigma_sq, Z, gamma0, Sigma_diag, ctx)
    log_jump = -0.5 * ctx.mahalanobis(gamma - a_star) + 0.5 * ctx.mahalanobis(gamma_star - a)
    log_target = gamma_log_posterior(gamma_star, eps, sigma_sq, Z, gamma0, Sigma_diag) - gamma_log_posterior(
        gamma, eps, sigma_sq, Z, gamma0, Sigma_diag
    )
    return log_jump + log_target


def draw_gamma(state: VarianceState, eps, Z, hyper, ctx: GammaProposalContext, rng: np.random.Generator):
    """One Metropolis-Hastings update of gamma.

    Returns ``(gamma, accepted)``; on acceptance ``state`` is updated in
    place. Proposals with a linear predictor beyond +-700 and ratios that
    are not finite are rejected.
    """
    gamma = state.gamma
    a, _ = gamerman_proposal_params(gamma, eps, state.sigma_sq, Z, hyper.gamma0, hyper.Sigma_diag, ctx)
    gamma_star = a + ctx.chol_B @ rng.standard_normal(gamma.size)
    u = rng.random()
    if np.max(np.abs(Z @ gamma_star)) > EXPONENT_LIMIT:
        return gamma, False
    try:
        log_r = gamma_log_ratio(
            gamma, gamma_star, eps, state.sigma_sq, Z, hyper.gamma0, hyper.Sigma_diag, ctx, a=a
        )
    except NumericalError:
        return gamma, False
    if not math.isfinite(log_r) and log_r != math.inf:
        return gamma, False
    if u == 0 or math.log(u) < log_r:
        state.update(Z, gamma=gamma_star)
        return state.gamma, True
    return gamma, False
