"""Prior hyperparameters and their data-driven calibration."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaincc

from .data import Dataset
from .errors import DataError, NumericalError


@dataclass(frozen=True)
class Hyperparams:
    """Prior constants and run lengths.

    ``lam`` and ``sigma_mu_sq`` are filled in by :meth:`resolve` unless
    given explicitly; ``gamma0`` and ``Sigma_diag`` default to 0 and 1000
    per variance coefficient. ``pin_gamma`` turns the sampler into the
    homoskedastic baseline (gamma fixed at 0, its update skipped).
    ``max_depth`` optionally truncates the tree prior. With ``center_z`` the
    sampler works with column-centered Z, so the inverse-gamma prior sits on
    the variance at the mean covariate rather than at z = 0; stored draws
    are converted back to the raw-Z intercept either way.
    """

    m: int = 50
    alpha: float = 0.95
    beta: float = 2.0
    nu: float = 3.0
    q: float = 0.9
    lam: float | None = None
    k_shrink: float = 2.0
    sigma_mu_sq: float | None = None
    gamma0: tuple[float, ...] | None = None
    Sigma_diag: tuple[float, ...] | None = None
    proposal_probs: tuple[float, float, float] = (0.28, 0.28, 0.44)
    n_burn: int = 250
    n_post: int = 1000
    max_depth: int | None = None
    pin_gamma: bool = False
    center_z: bool = True

    def __post_init__(self):
        for name in ("gamma0", "Sigma_diag", "proposal_probs"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(value)))
        if self.m < 1:
            raise DataError("m must be >= 1")
        if not 0 < self.alpha < 1 or self.beta < 0:
            raise DataError("need 0 < alpha < 1 and beta >= 0")
        if self.nu <= 0 or not 0 < self.q < 1:
            raise DataError("need nu > 0 and 0 < q < 1")
        if self.k_shrink <= 0:
            raise DataError("k_shrink must be positive")
        probs = self.proposal_probs
        if len(probs) != 3 or min(probs) < 0 or abs(sum(probs) - 1) > 1e-12:
            raise DataError(f"proposal_probs must be 3 non-negative numbers summing to 1, got {probs}")
        if self.n_burn < 0 or self.n_post < 1:
            raise DataError("need n_burn >= 0 and n_post >= 1")
        if self.lam is not None and self.lam <= 0:
            raise DataError("lam must be positive")
        if self.sigma_mu_sq is not None and self.sigma_mu_sq <= 0:
            raise DataError("sigma_mu_sq must be positive")
        if self.Sigma_diag is not None and min(self.Sigma_diag) <= 0:
            raise DataError("Sigma_diag entries must be positive")
        if self.max_depth is not None and self.max_depth < 0:
            raise DataError("max_depth must be non-negative")

    @property
    def resolved(self) -> bool:
        return None not in (self.lam, self.sigma_mu_sq, self.gamma0, self.Sigma_diag)

    def resolve(self, dataset: Dataset) -> Hyperparams:
        """Fill every data-dependent constant for ``dataset``."""
        k = dataset.k
        gamma0 = self.gamma0 if self.gamma0 is not None else (0.0,) * k
        Sigma = self.Sigma_diag if self.Sigma_diag is not None else (1000.0,) * k
        if len(gamma0) == 1 and k > 1:
            gamma0 = gamma0 * k
        if len(Sigma) == 1 and k > 1:
            Sigma = Sigma * k
        if len(gamma0) != k or len(Sigma) != k:
            raise DataError(f"gamma0 and Sigma_diag need {k} entries")
        lam = self.lam if self.lam is not None else calibrate_lambda(dataset, self.nu, self.q)
        smu = self.sigma_mu_sq if self.sigma_mu_sq is not None else compute_sigma_mu_sq(self.m, self.k_shrink)
        return replace(self, lam=lam, sigma_mu_sq=smu, gamma0=gamma0, Sigma_diag=Sigma)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("gamma0", "Sigma_diag", "proposal_probs"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


def ols_residual_variance(y: np.ndarray, X: np.ndarray) -> float:
    """Residual variance of an intercept-plus-X least-squares fit.

    Uses the ``n - p - 1`` degrees-of-freedom estimate; falls back to the
    sample variance of ``y`` when X is rank deficient or ``p >= n - 1``.
    """
    n, p = X.shape
    A = np.column_stack([np.ones(n), X])
    if p < n - 1 and np.linalg.matrix_rank(A) == p + 1:
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        return float(resid @ resid / (n - p - 1))
    return float(np.var(y, ddof=1))


def invgamma_cdf(x: float, shape: float, scale: float) -> float:
    """P(X <= x) for X ~ InvGamma(shape, scale)."""
    return float(gammaincc(shape, scale / x))


def solve_lambda(s2: float, nu: float, q: float) -> float:
    """Find lambda with P(sigma^2 <= s2) = q under InvGamma(nu/2, nu*lambda/2)."""
    if not (s2 > 0 and math.isfinite(s2)):
        raise NumericalError(f"cannot calibrate lambda from residual variance {s2}")

    def excess(lam):
        return invgamma_cdf(s2, nu / 2, nu * lam / 2) - q

    lo, hi = s2, s2
    # the CDF at s2 decreases as lambda grows
    for _ in range(200):
        if excess(lo) > 0:
            break
        lo /= 4
    for _ in range(200):
        if excess(hi) < 0:
            break
        hi *= 4
    if not (excess(lo) > 0 > excess(hi)):
        raise NumericalError("lambda root search failed to bracket")
    return brentq(excess, lo, hi, xtol=1e-300, rtol=1e-13, maxiter=500)


def calibrate_lambda(dataset: Dataset, nu: float, q: float) -> float:
    """Calibrate the inverse-gamma scale so that the prior puts mass ``q``
    below the OLS residual variance of the scaled response."""
    if nu <= 0 or not 0 < q < 1:
        raise DataError("need nu > 0 and 0 < q < 1")
    s2 = ols_residual_variance(dataset.y_scaled, dataset.X)
    return solve_lambda(s2, nu, q)


def compute_sigma_mu_sq(m: int, k_shrink: float) -> float:
    if m < 1 or k_shrink <= 0:
        raise DataError("need m >= 1 and k_shrink > 0")
    return (0.5 / (k_shrink * math.sqrt(m))) ** 2
