import numpy as np
import pytest

from maskflow.errors import ConfigurationError, NumericalError
from maskflow.measurement import MaskPolicy, make_mask
from maskflow.oracle import (
    build_prior,
    cell_centres,
    conditional_mean,
    conditional_samples,
    pair_prior,
    poisson_operator,
    sample_prior,
)
from maskflow.pde import solve_poisson


def test_long_length_scale_limit():
    p = build_prior(4, 1e6, variance=2.0)
    np.testing.assert_allclose(p.cov, 2.0 * np.ones((16, 16)) + p.jitter * np.eye(16), atol=1e-10)


def test_diagonal_and_brute_force_kernel():
    p = build_prior(8, 0.3, variance=1.5, jitter=1e-6)
    assert np.all(np.diag(p.cov) == 1.5 + 1e-6)
    pts = cell_centres(8)
    brute = np.empty((64, 64))
    for i in range(64):
        for j in range(64):
            d2 = (pts[i, 0] - pts[j, 0]) ** 2 + (pts[i, 1] - pts[j, 1]) ** 2
            brute[i, j] = 1.5 * np.exp(-0.5 * d2 / 0.09) + (1e-6 if i == j else 0.0)
    np.testing.assert_allclose(p.cov, brute, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(p.chol @ p.chol.T, p.cov, atol=1e-12)


def test_invalid_prior_parameters():
    with pytest.raises(ConfigurationError):
        build_prior(8, 0.0)
    with pytest.raises(ConfigurationError):
        build_prior(8, 0.2, variance=-1)
    with pytest.raises(ConfigurationError):
        build_prior(8, 0.2, jitter=-1e-3)
    with pytest.raises(NumericalError):
        build_prior(8, 10.0, jitter=0.0)


def test_sampling_repeatable_and_covariance():
    p = build_prior(8, 0.25)
    np.testing.assert_array_equal(sample_prior(p, 3), sample_prior(p, 3))
    x = sample_prior(p, 0, n=10_000).reshape(10_000, -1)
    emp = np.cov(x, rowvar=False)
    rng = np.random.default_rng(1)
    for _ in range(10):
        i, j = rng.integers(0, 64, size=2)
        if abs(p.cov[i, j]) > 0.2:
            assert abs(emp[i, j] - p.cov[i, j]) < 0.1 * p.cov[i, j]


def test_white_limit_independent_pixels():
    p = build_prior(8, 1e-4, variance=1.0, jitter=1.0)
    x = sample_prior(p, 0, n=10_000).reshape(10_000, -1)
    emp = np.cov(x, rowvar=False)
    rng = np.random.default_rng(2)
    pairs = [(i, j) for i, j in rng.integers(0, 64, size=(40, 2)) if i != j][:10]
    assert all(abs(emp[i, j]) < 0.05 for i, j in pairs)


def test_conditioning_edge_cases():
    p = build_prior(8, 0.3)
    y = sample_prior(p, 2)
    mean, var = conditional_mean(p, np.ones((8, 8), dtype=bool), y)
    np.testing.assert_array_equal(mean, y)
    assert np.all(var <= p.jitter)
    mean, var = conditional_mean(p, np.zeros((8, 8), dtype=bool), y)
    assert np.all(mean == 0)
    np.testing.assert_array_equal(var.ravel(), np.diag(p.cov))


def test_one_observed_pixel_matches_dense_solve():
    p = build_prior(8, 0.3)
    m = np.zeros((8, 8), dtype=bool)
    m[2, 5] = True
    y = np.zeros((8, 8))
    y[2, 5] = 0.7
    mean, var = conditional_mean(p, m, y)
    k = 2 * 8 + 5
    expected = p.cov[:, k] / p.cov[k, k] * 0.7
    np.testing.assert_allclose(mean.ravel(), expected, atol=1e-12)
    np.testing.assert_allclose(var.ravel()[np.arange(64) != k],
                               (np.diag(p.cov) - p.cov[:, k] ** 2 / p.cov[k, k])[np.arange(64) != k], atol=1e-12)


def test_posterior_properties():
    p = build_prior(8, 0.25)
    m = make_mask(MaskPolicy(ratio=0.2), 8, 0)
    y = sample_prior(p, 5)
    mean, var = conditional_mean(p, m, y)
    np.testing.assert_array_equal(mean[m], y[m])
    assert np.all(var[m] == 0) and np.all(var <= p.variance + p.jitter)
    # vector form of the observations gives the same result
    mean2, _ = conditional_mean(p, m, y[m])
    np.testing.assert_array_equal(mean, mean2)
    with pytest.raises(ConfigurationError):
        conditional_mean(p, m, np.zeros(3))


def test_posterior_mean_is_bayes_optimal():
    p = build_prior(8, 0.3)
    m = make_mask(MaskPolicy(ratio=0.15), 8, 1)
    y = sample_prior(p, 9)
    mean, var = conditional_mean(p, m, y)
    draws = conditional_samples(p, m, y, 10_000, 4)
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.05)
    np.testing.assert_allclose(draws.var(axis=0), var, atol=0.05)
    base = np.mean(np.sum((draws - mean) ** 2, axis=(1, 2)))
    rng = np.random.default_rng(0)
    for _ in range(100):
        cand = mean + 0.05 * rng.standard_normal(mean.shape) * ~m
        assert np.mean(np.sum((draws - cand) ** 2, axis=(1, 2))) >= base


def test_poisson_operator_matches_solver(rng):
    G = poisson_operator(8)
    a = rng.standard_normal((8, 8))
    np.testing.assert_allclose(G @ a.ravel(), solve_poisson(a).ravel(), atol=1e-12)


def test_pair_prior_structure():
    base = build_prior(8, 0.3)
    pp = pair_prior(base)
    assert pp.shape == (2, 8, 8)
    x = sample_prior(pp, 0, n=3)
    G = poisson_operator(8)
    var_a = np.mean(np.diag(base.cov))
    # u is an exact linear image of a
    c = np.sqrt(var_a / np.mean(np.diag(G @ (base.cov - base.jitter * np.eye(64)) @ G.T)))
    for s in x:
        np.testing.assert_allclose(s[1].ravel(), c * G @ s[0].ravel(), atol=1e-3)
    assert np.mean(np.diag(pp.cov)[64:]) == pytest.approx(np.mean(np.diag(pp.cov)[:64]), rel=1e-6)
