import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from rfnet.model import (
    GeneralGaussian,
    RfnModel,
    center,
    covariance,
    estep_stats,
    expected_recon_error,
    fa_em_fit,
    kl_gaussian,
    log_likelihood,
    mean_kl_to_prior,
    objective_F,
    posterior,
    posterior_moments,
    posterior_moments_general,
)
from rfnet.numerics import DimensionMismatch

from conftest import random_spd
from oracles import (
    central_difference,
    fa_sample,
    gaussian_loglik,
    loop_covariance,
    loop_estep_stats,
    woodbury_posterior_mean,
)


def random_model(rng, m=6, l=3, full=False):
    W = rng.standard_normal((m, l))
    psi = random_spd(rng, m, shift=0.5) / m if full else rng.uniform(0.2, 1.5, m)
    return RfnModel(W=W, psi=psi)


# -- center / covariance ------------------------------------------------------

def test_center_small():
    Vc, mean = center(np.array([[1.0], [3.0]]))
    assert_array_equal(Vc, [[-1.0], [1.0]])
    assert_array_equal(mean, [2.0])


def test_center_idempotent_and_pure(rng):
    V = rng.standard_normal((10, 3))
    orig = V.copy()
    Vc, _ = center(V)
    assert_array_equal(V, orig)
    assert np.all(np.abs(Vc.mean(axis=0)) < 1e-12)
    assert_allclose(center(Vc)[0], Vc, atol=1e-12)


def test_covariance_examples():
    assert_array_equal(covariance(np.array([[1.0, 2.0]])), [[1, 2], [2, 4]])
    assert_array_equal(covariance(np.array([[1.0, 0.0], [-1.0, 0.0]])), [[1, 0], [0, 0]])


def test_covariance_matches_loops(rng):
    V = rng.standard_normal((50, 4))
    assert_allclose(covariance(V), loop_covariance(V), atol=1e-12)


# -- posterior ------------------------------------------------------------------

def test_posterior_zero_loadings(rng):
    model = RfnModel(W=np.zeros((4, 2)), psi=np.ones(4))
    mu_p, Sigma_p = posterior_moments(model, rng.standard_normal((5, 4)))
    assert_array_equal(mu_p, 0.0)
    assert_allclose(Sigma_p, np.eye(2))


def test_posterior_scalar():
    model = RfnModel(W=[[1.0]], psi=[1.0])
    mu_p, Sigma_p = posterior_moments(model, np.array([[2.0]]))
    assert_allclose(Sigma_p, [[0.5]])
    assert_allclose(mu_p, [[1.0]])


@pytest.mark.parametrize("full", [False, True])
def test_posterior_matches_woodbury(rng, full):
    model = random_model(rng, 3, 2, full)
    V = rng.standard_normal((7, 3))
    mu_p, _ = posterior_moments(model, V)
    assert_allclose(mu_p, woodbury_posterior_mean(model.W, model.psi, V), atol=1e-10)


def test_posterior_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        posterior_moments(random_model(rng, 4, 2), np.ones((3, 5)))


def test_posterior_moments_rejects_general_prior(rng):
    model = random_model(rng)
    model.prior = GeneralGaussian(np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        posterior_moments(model, np.ones((2, 6)))


def test_general_prior_reduces_to_standard(rng):
    model = random_model(rng)
    V = rng.standard_normal((5, 6))
    general = RfnModel(W=model.W, psi=model.psi, prior=GeneralGaussian(np.zeros(3), np.eye(3)))
    a = posterior_moments(model, V)
    b = posterior_moments_general(general, V)
    assert_allclose(b[0], a[0], atol=1e-13)
    assert_allclose(b[1], a[1], atol=1e-13)


def test_general_prior_zero_loadings(rng):
    xi = np.array([0.5, -1.0])
    M = random_spd(rng, 2)
    model = RfnModel(W=np.zeros((3, 2)), psi=np.ones(3), prior=GeneralGaussian(xi, M))
    mu_p, Sigma_p = posterior_moments_general(model, rng.standard_normal((4, 3)))
    assert_allclose(mu_p, np.tile(xi, (4, 1)), atol=1e-12)
    assert_allclose(Sigma_p, M, atol=1e-12)


def test_general_prior_formula(rng):
    xi = rng.standard_normal(3)
    M = random_spd(rng, 3)
    base = random_model(rng)
    model = RfnModel(W=base.W, psi=base.psi, prior=GeneralGaussian(xi, M))
    V = rng.standard_normal((4, 6))
    mu_p, Sigma_p = posterior_moments_general(model, V)
    Pinv = np.diag(1 / model.psi)
    Sig = np.linalg.inv(np.linalg.inv(M) + model.W.T @ Pinv @ model.W)
    assert_allclose(Sigma_p, Sig, atol=1e-12)
    expected = (Sig @ (model.W.T @ Pinv @ V.T + np.linalg.solve(M, xi)[:, None])).T
    assert_allclose(mu_p, expected, atol=1e-12)


def test_negative_prior_mean_shifts_posterior_down(rng):
    base = random_model(rng, 8, 3)
    V = rng.standard_normal((20, 8))
    rho = 0.3
    shifted = RfnModel(W=base.W, psi=base.psi, prior=GeneralGaussian(-rho * np.ones(3), np.eye(3)))
    mu_std, Sigma_p = posterior_moments(base, V)
    mu_gen, _ = posterior_moments_general(shifted, V)
    if np.all(Sigma_p @ np.ones(3) > 0):
        assert np.all(mu_gen < mu_std)
    assert_allclose(mu_std - mu_gen, np.tile(rho * Sigma_p @ np.ones(3), (20, 1)), atol=1e-12)


# -- statistics -------------------------------------------------------------------

def test_estep_stats_zero_code(rng):
    Sigma = random_spd(rng, 2)
    U, S = estep_stats(rng.standard_normal((4, 3)), np.zeros((4, 2)), Sigma)
    assert_array_equal(U, 0.0)
    assert_allclose(S, Sigma)


def test_estep_stats_single_sample():
    U, _ = estep_stats(np.array([[1.0, 0.0]]), np.array([[2.0]]), np.eye(1))
    assert_array_equal(U, [[2.0], [0.0]])


def test_estep_stats_matches_loops(rng):
    V = rng.standard_normal((9, 4))
    mu = rng.standard_normal((9, 3))
    Sigma = random_spd(rng, 3)
    U, S = estep_stats(V, mu, Sigma)
    Uo, So = loop_estep_stats(V, mu, Sigma)
    assert_allclose(U, Uo, atol=1e-12)
    assert_allclose(S, So, atol=1e-12)


# -- expected reconstruction error ---------------------------------------------------

def test_recon_error_trivial_cases():
    model = RfnModel(W=np.zeros((1, 1)), psi=[1.0])
    assert expected_recon_error(model, np.zeros((1, 1)), np.zeros((1, 1)), np.eye(1)) == \
        pytest.approx(0.5 * np.log(2 * np.pi))
    C = np.array([[2.0, 0.3], [0.3, 1.0]])
    model = RfnModel(W=np.zeros((2, 1)), psi=np.ones(2))
    assert expected_recon_error(model, C, np.zeros((2, 1)), np.eye(1)) == \
        pytest.approx(0.5 * (2 * np.log(2 * np.pi) + 3.0))


def test_recon_error_monte_carlo(rng):
    model = random_model(rng, 4, 2)
    V = rng.standard_normal((5, 4))
    mu = rng.standard_normal((5, 2))
    Sigma = random_spd(rng, 2) * 0.3
    U, S = estep_stats(V, mu, Sigma)
    value = expected_recon_error(model, covariance(V), U, S)

    draws = 20_000
    L = np.linalg.cholesky(Sigma)
    per_sample = []
    for i in range(5):
        H = mu[i] + rng.standard_normal((draws, 2)) @ L.T
        R = V[i] - H @ model.W.T
        nll = 0.5 * (4 * np.log(2 * np.pi) + np.sum(np.log(model.psi)) + np.sum(R * R / model.psi, axis=1))
        per_sample.append(nll)
    est = np.mean([p.mean() for p in per_sample])
    se = np.sqrt(np.sum([p.var() / draws for p in per_sample])) / 5
    assert abs(est - value) < 3 * se + 1e-12


def test_recon_error_full_psi_matches_diagonal(rng):
    model = random_model(rng, 4, 2)
    full = RfnModel(W=model.W, psi=np.diag(model.psi))
    V = rng.standard_normal((6, 4))
    U, S = estep_stats(V, rng.standard_normal((6, 2)), np.eye(2))
    C = covariance(V)
    assert expected_recon_error(full, C, U, S) == pytest.approx(expected_recon_error(model, C, U, S), rel=1e-12)


# -- KL ------------------------------------------------------------------------------

def test_kl_trivial_cases(rng):
    mu = rng.standard_normal(3)
    Sigma = random_spd(rng, 3)
    assert kl_gaussian(mu, Sigma, mu, Sigma) == pytest.approx(0.0, abs=1e-12)
    assert kl_gaussian(np.array([1.0, 0.0]), np.eye(2), np.zeros(2), np.eye(2)) == pytest.approx(0.5)


def test_kl_monte_carlo(rng):
    mu_q, mu_p = rng.standard_normal(3), rng.standard_normal(3)
    Sq, Sp = random_spd(rng, 3, 0.5), random_spd(rng, 3, 0.5)
    q = scipy.stats.multivariate_normal(mu_q, Sq)
    p = scipy.stats.multivariate_normal(mu_p, Sp)
    x = q.rvs(size=200_000, random_state=rng)
    est = np.mean(q.logpdf(x) - p.logpdf(x))
    assert kl_gaussian(mu_q, Sq, mu_p, Sp) == pytest.approx(est, rel=0.01)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_kl_non_negative(k, seed):
    rng = np.random.default_rng(seed)
    value = kl_gaussian(rng.standard_normal(k), random_spd(rng, k, 0.1),
                        rng.standard_normal(k), random_spd(rng, k, 0.1))
    assert value >= -1e-12


def test_kl_gradient_finite_differences(rng):
    Sq, Sp = random_spd(rng, 3), random_spd(rng, 3)
    mu_p = rng.standard_normal(3)
    for _ in range(10):
        mu = rng.standard_normal(3)
        analytic = np.linalg.solve(Sp, mu - mu_p)
        numeric = central_difference(lambda x: kl_gaussian(x, Sq, mu_p, Sp), mu)
        assert np.linalg.norm(numeric - analytic) < 1e-5 * np.linalg.norm(analytic)


def test_mean_kl_to_prior_matches_pairwise(rng):
    model = random_model(rng, 5, 3)
    mu = rng.standard_normal((4, 3))
    Sigma = random_spd(rng, 3, 0.2) * 0.2
    direct = np.mean([kl_gaussian(m_i, Sigma, np.zeros(3), np.eye(3)) for m_i in mu])
    assert mean_kl_to_prior(model, mu, Sigma) == pytest.approx(direct, rel=1e-12)
    xi, M = rng.standard_normal(3), random_spd(rng, 3)
    model.prior = GeneralGaussian(xi, M)
    direct = np.mean([kl_gaussian(m_i, Sigma, xi, M) for m_i in mu])
    assert mean_kl_to_prior(model, mu, Sigma) == pytest.approx(direct, rel=1e-12)


# -- objective F ------------------------------------------------------------------------

def test_F_at_exact_posterior_is_log_likelihood(rng):
    model = random_model(rng, 5, 2)
    V = rng.standard_normal((30, 5))
    mu_p, Sigma_p = posterior_moments(model, V)
    expected = gaussian_loglik(V, model.W @ model.W.T + np.diag(model.psi))
    assert objective_F(model, V, mu_p, Sigma_p) == pytest.approx(expected, abs=1e-8)
    assert log_likelihood(model, V) == pytest.approx(expected, abs=1e-10)


def test_F_trivial_model(rng):
    V = rng.standard_normal((6, 3))
    model = RfnModel(W=np.zeros((3, 2)), psi=np.ones(3))
    expected = -np.mean(0.5 * (3 * np.log(2 * np.pi) + np.sum(V * V, axis=1)))
    assert objective_F(model, V, np.zeros((6, 2)), np.eye(2)) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_F_lower_bound_and_decomposition(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 4, 2)
    V = rng.standard_normal((8, 4))
    mu = rng.standard_normal((8, 2))
    Sigma = random_spd(rng, 2, 0.1) * 0.3
    F = objective_F(model, V, mu, Sigma)
    ll = log_likelihood(model, V)
    mu_p, Sigma_p = posterior_moments(model, V)
    kl_post = np.mean([kl_gaussian(mu[i], Sigma, mu_p[i], Sigma_p) for i in range(8)])
    assert F <= ll + 1e-10
    assert F + kl_post == pytest.approx(ll, abs=1e-8)


def test_log_likelihood_general_prior(rng):
    base = random_model(rng, 4, 2)
    xi, M = rng.standard_normal(2), random_spd(rng, 2)
    model = RfnModel(W=base.W, psi=base.psi, prior=GeneralGaussian(xi, M))
    V = rng.standard_normal((10, 4))
    K = model.W @ M @ model.W.T + np.diag(model.psi)
    assert log_likelihood(model, V) == pytest.approx(gaussian_loglik(V - model.W @ xi, K), abs=1e-10)


# -- factor analysis EM -----------------------------------------------------------------

def test_fa_zero_iterations_returns_init(rng):
    V, _ = center(rng.standard_normal((40, 5)))
    init = random_model(rng, 5, 2)
    out = fa_em_fit(V, 2, 0, init=init)
    assert_array_equal(out.W, init.W)
    assert_array_equal(out.psi, init.psi)


def test_fa_recovers_one_factor_model():
    rng = np.random.default_rng(3)
    W = rng.uniform(0.5, 1.5, (5, 1))
    psi = rng.uniform(0.2, 0.6, 5)
    V, _ = center(fa_sample(W, psi, 2000, rng))
    model = fa_em_fit(V, 1, 300, seed=1)
    target = covariance(V)
    fitted = model.W @ model.W.T + np.diag(model.psi)
    assert np.linalg.norm(fitted - target) / np.linalg.norm(target) < 0.1


def test_fa_log_likelihood_monotone(rng):
    W = rng.standard_normal((8, 2))
    V, _ = center(fa_sample(W, rng.uniform(0.3, 1.0, 8), 300, rng))
    lls = []
    fa_em_fit(V, 3, 100, seed=2, callback=lambda k, m: lls.append(log_likelihood(m, V)))
    assert np.min(np.diff(lls)) > -1e-9
