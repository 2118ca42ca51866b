import math

import numpy as np
import pytest
from oracles import (
    closed_form_log_r,
    batch_means_se,
    gamma_log_target,
    hastings_log_r,
    homo_leaf_posterior,
    irls_proposal,
    random_gamma_case,
)
from scipy import integrate

from hbart.priors import Hyperparams
from hbart.samplers import (
    GammaProposalContext,
    VarianceState,
    draw_gamma,
    draw_sigma_sq,
    gamerman_proposal_params,
    gamma_log_posterior,
    gamma_log_ratio,
    leaf_posterior,
    sigma_sq_posterior,
)


class ShiftedNormals:
    """Generator stand-in with a fixed normal draw and uniform 0.5."""

    def __init__(self, z):
        self.z = z

    def standard_normal(self, size=None):
        return np.full(size, self.z)

    def random(self):
        return 0.5


def test_leaf_posterior_homoskedastic(rng):
    for _ in range(50):
        r = rng.normal(size=int(rng.integers(1, 20)))
        s2 = float(np.exp(rng.normal()))
        smu = float(np.exp(rng.uniform(-5, 0)))
        mean, var = leaf_posterior(r.size / s2, r.sum() / s2, smu)
        want_mean, want_var = homo_leaf_posterior(r, s2, smu)
        assert mean == pytest.approx(want_mean, rel=1e-12) and var == pytest.approx(want_var, rel=1e-12)


def test_leaf_posterior_weights_by_precision():
    # a near-noiseless observation pins the leaf value
    mean, var = leaf_posterior(1 / 1e-12 + 1 / 100, 3.0 / 1e-12 + 50 / 100, 1.0)
    assert mean == pytest.approx(3.0, rel=1e-9)
    assert var < 1e-11


def test_sigma_sq_posterior_parameters(rng):
    eps = rng.normal(size=7)
    Z = rng.normal(size=(7, 2))
    g = np.array([0.3, -0.2])
    shape, scale = sigma_sq_posterior(eps, g, Z, 3.0, 0.5)
    assert shape == 5.0
    assert scale == pytest.approx(0.5 * (1.5 + np.sum(eps**2 * np.exp(-Z @ g))))
    # no data leaves the prior
    assert sigma_sq_posterior([], g, Z[:0], 3.0, 0.5) == (1.5, 0.75)


def test_proposal_params_match_direct_irls(rng):
    for _ in range(20):
        gamma, _, eps, s2, Z, g0, S = random_gamma_case(rng)
        ctx = GammaProposalContext(Z, S)
        a, B = gamerman_proposal_params(gamma, eps, s2, Z, g0, S, ctx)
        a_ref, B_ref = irls_proposal(gamma, eps, s2, Z, g0, S)
        np.testing.assert_allclose(a, a_ref, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(B, B_ref, rtol=1e-9, atol=1e-14)


def test_log_posterior_differences_match_density(rng):
    for _ in range(20):
        gamma, gamma_star, eps, s2, Z, g0, S = random_gamma_case(rng)
        got = gamma_log_posterior(gamma_star, eps, s2, Z, g0, S) - gamma_log_posterior(gamma, eps, s2, Z, g0, S)
        want = gamma_log_target(gamma_star, eps, s2, Z, g0, S) - gamma_log_target(gamma, eps, s2, Z, g0, S)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-9)


def test_sampler_ratio_is_textbook_hastings(rng):
    for _ in range(200):
        case = random_gamma_case(rng)
        gamma, gamma_star, eps, s2, Z, g0, S = case
        ctx = GammaProposalContext(Z, S)
        got = gamma_log_ratio(gamma, gamma_star, eps, s2, Z, g0, S, ctx)
        assert got == pytest.approx(hastings_log_r(*case), rel=1e-9, abs=1e-9)


def test_sampler_ratio_is_closed_form_with_jump_reversed(rng):
    # the closed form orients the jump term forward/backward; flipping
    # it gives the sampler's ratio exactly
    for _ in range(200):
        case = random_gamma_case(rng)
        gamma, gamma_star, eps, s2, Z, g0, S = case
        ctx = GammaProposalContext(Z, S)
        got = gamma_log_ratio(gamma, gamma_star, eps, s2, Z, g0, S, ctx)
        a, B = irls_proposal(gamma, eps, s2, Z, g0, S)
        a_star, _ = irls_proposal(gamma_star, eps, s2, Z, g0, S)
        Binv = np.linalg.inv(B)
        jump = 0.5 * (gamma - gamma_star + a - a_star) @ Binv @ (gamma + gamma_star - a - a_star)
        flipped = closed_form_log_r(*case) - 2 * jump
        assert got == pytest.approx(flipped, rel=1e-8, abs=1e-8)


def test_identical_proposal_has_unit_ratio(rng):
    gamma, _, eps, s2, Z, g0, S = random_gamma_case(rng)
    ctx = GammaProposalContext(Z, S)
    assert gamma_log_ratio(gamma, gamma, eps, s2, Z, g0, S, ctx) == 0.0


def test_overflowing_proposal_rejected(rng):
    Z = rng.uniform(1, 2, (10, 1))
    eps = rng.normal(size=10)
    h = Hyperparams(gamma0=(0.0,), Sigma_diag=(1.0,))
    state = VarianceState.build(1.0, [0.0], Z)
    ctx = GammaProposalContext(Z, h.Sigma_diag)
    before = state.sigma_sq_i.copy()
    gamma, accepted = draw_gamma(state, eps, Z, h, ctx, ShiftedNormals(1e6))
    assert not accepted and gamma[0] == 0.0
    np.testing.assert_array_equal(state.sigma_sq_i, before)


def gamma_chain(eps, s2, Z, h, n, seed):
    r = np.random.default_rng(seed)
    state = VarianceState.build(s2, np.zeros(Z.shape[1]), Z)
    ctx = GammaProposalContext(Z, h.Sigma_diag)
    out = np.empty(n)
    for i in range(n):
        draw_gamma(state, eps, Z, h, ctx, r)
        out[i] = state.gamma[0]
    return out


def test_gamma_chain_targets_full_conditional():
    # one-dimensional target integrated by quadrature
    r = np.random.default_rng(2)
    n = 60
    Z = np.linspace(-1, 1, n)[:, None]
    eps = r.normal(size=n) * np.exp(0.5 * 1.5 * Z[:, 0])
    s2 = 1.0
    h = Hyperparams(gamma0=(0.5,), Sigma_diag=(2.0,))

    def log_p(g):
        return gamma_log_target(np.array([g]), eps, s2, Z, np.array([0.5]), np.array([2.0]))

    mode = max(np.linspace(-5, 5, 2001), key=log_p)
    peak = log_p(mode)
    dens = lambda g: math.exp(log_p(g) - peak)  # noqa: E731
    norm = integrate.quad(dens, mode - 10, mode + 10, points=[mode])[0]
    mean = integrate.quad(lambda g: g * dens(g), mode - 10, mode + 10, points=[mode])[0] / norm
    second = integrate.quad(lambda g: g * g * dens(g), mode - 10, mode + 10, points=[mode])[0] / norm

    draws = gamma_chain(eps, s2, Z, h, 40_000, 9)[2000:]
    assert abs(draws.mean() - mean) < 4 * batch_means_se(draws)
    assert abs(np.mean(draws**2) - second) < 4 * batch_means_se(draws**2)


def test_variance_state_consistency(rng):
    Z = rng.normal(size=(5, 2))
    v = VarianceState.build(2.0, [0.1, -0.3], Z)
    np.testing.assert_allclose(v.sigma_sq_i, 2.0 * np.exp(Z @ [0.1, -0.3]))
    v.update(Z, sigma_sq=0.5)
    np.testing.assert_allclose(v.log_sigma_sq_i, np.log(0.5) + Z @ [0.1, -0.3])


def test_draw_sigma_sq_is_positive(rng):
    eps = rng.normal(size=20)
    Z = rng.normal(size=(20, 1))
    draws = [draw_sigma_sq(eps, [0.2], Z, 3.0, 0.1, rng) for _ in range(200)]
    assert min(draws) > 0
