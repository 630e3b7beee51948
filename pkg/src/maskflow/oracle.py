"""Exact linear-Gaussian reference: dense priors, analytic conditioning, sampling.

Dense Cholesky keeps this practical up to 32x32 grids (matrix order 1024,
or 2048 for a coefficient-solution pair).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, NumericalError
from .pde.elliptic import solve_poisson


@dataclass
class GaussianPrior:
    """Zero-mean Gaussian over fields of shape ``shape`` with dense covariance ``cov``."""

    shape: tuple
    cov: np.ndarray
    chol: np.ndarray
    length_scale: float
    variance: float
    jitter: float

    @property
    def size(self):
        return int(np.prod(self.shape))


def _cholesky(cov, jitter):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"covariance is not positive definite with jitter {jitter:g}; increase the jitter"
        ) from None


def cell_centres(resolution):
    t = (np.arange(resolution) + 0.5) / resolution
    x, y = np.meshgrid(t, t, indexing="ij")
    return np.column_stack([x.ravel(), y.ravel()])


def se_kernel(p, q, length_scale, variance):
    d2 = np.sum((p[:, None, :] - q[None, :, :]) ** 2, axis=-1)
    return variance * np.exp(-0.5 * d2 / length_scale**2)


def build_prior(resolution, length_scale, variance=1.0, jitter=None):
    """Squared-exponential prior on the cell-centred ``resolution**2`` grid.

    ``jitter`` defaults to ``1e-8 * variance`` and is added to the diagonal.
    """
    if not (length_scale > 0 and variance > 0):
        raise ConfigurationError("length scale and variance must be positive")
    jitter = 1e-8 * variance if jitter is None else float(jitter)
    if jitter < 0:
        raise ConfigurationError("jitter must be non-negative")
    pts = cell_centres(int(resolution))
    cov = se_kernel(pts, pts, length_scale, variance)
    cov[np.diag_indices_from(cov)] += jitter
    return GaussianPrior(
        (int(resolution), int(resolution)), cov, _cholesky(cov, jitter), length_scale, variance, jitter
    )


def poisson_operator(resolution):
    """Dense matrix of the Dirichlet Poisson solve ``a -> u`` (columns are unit responses)."""
    n = int(resolution)
    cols = np.empty((n * n, n * n))
    e = np.zeros((n, n))
    for j in range(n * n):
        e.ravel()[j] = 1.0
        cols[:, j] = solve_poisson(e).ravel()
        e.ravel()[j] = 0.0
    return cols


def pair_prior(prior, operator=None):
    """Joint prior of ``(a, u)`` with ``a ~ prior`` and ``u = c * G a``.

    ``G`` defaults to the Poisson solve; ``c`` rescales it so the mean
    marginal variance of ``u`` equals that of ``a``.
    """
    if len(prior.shape) != 2:
        raise ConfigurationError("pair_prior expects a single-field prior")
    G = poisson_operator(prior.shape[0]) if operator is None else np.asarray(operator, dtype=np.float64)
    s_aa = prior.cov - prior.jitter * np.eye(prior.size)
    s_ua = G @ s_aa
    s_uu = s_ua @ G.T
    c = np.sqrt(np.mean(np.diag(s_aa)) / np.mean(np.diag(s_uu)))
    cov = np.block([[s_aa, c * s_ua.T], [c * s_ua, c * c * s_uu]])
    cov = 0.5 * (cov + cov.T)
    cov[np.diag_indices_from(cov)] += prior.jitter
    return GaussianPrior(
        (2,) + tuple(prior.shape), cov, _cholesky(cov, prior.jitter),
        prior.length_scale, prior.variance, prior.jitter,
    )


def sample_prior(prior, seed, n=None):
    """``L z`` with ``z`` standard normal; one field, or ``n`` stacked fields."""
    rng = np.random.default_rng(seed)
    count = 1 if n is None else int(n)
    z = rng.standard_normal((prior.size, count))
    x = (prior.chol @ z).T.reshape((count,) + tuple(prior.shape))
    return x[0] if n is None else x


def _split(prior, mask):
    m = np.asarray(mask, dtype=bool)
    if m.shape != tuple(prior.shape):
        raise ConfigurationError(f"mask shape {m.shape} does not match prior shape {prior.shape}")
    flat = m.ravel()
    return np.flatnonzero(flat), np.flatnonzero(~flat)


def _observed_values(prior, y, obs):
    y = np.asarray(y, dtype=np.float64)
    if y.shape == tuple(prior.shape):
        return y.ravel()[obs]
    if y.shape == (len(obs),):
        return y
    raise ConfigurationError("observations must be a full field or a vector over the observed entries")


def conditional_mean(prior, mask, y):
    """Posterior mean and marginal variance given exact observations on ``mask``.

    Args:
        prior: a ``GaussianPrior``.
        mask: boolean array of the prior's shape.
        y: a full field (read at observed entries) or the observed values in
            row-major order.

    Returns:
        ``(mean, variance)`` fields; the mean reproduces ``y`` exactly where
        observed and the variance is zero there.
    """
    obs, un = _split(prior, mask)
    mean = np.zeros(prior.size)
    var = np.diag(prior.cov).copy()
    if len(obs):
        yo = _observed_values(prior, y, obs)
        try:
            cf = scipy.linalg.cho_factor(prior.cov[np.ix_(obs, obs)], lower=True)
        except np.linalg.LinAlgError:
            raise NumericalError("observed covariance block is singular") from None
        k_uo = prior.cov[np.ix_(un, obs)]
        mean[un] = k_uo @ scipy.linalg.cho_solve(cf, yo)
        mean[obs] = yo
        w = scipy.linalg.solve_triangular(cf[0], k_uo.T, lower=True)
        var[un] = np.maximum(var[un] - np.sum(w**2, axis=0), 0.0)
        var[obs] = 0.0
    return mean.reshape(prior.shape), var.reshape(prior.shape)


def conditional_samples(prior, mask, y, n, seed):
    """``n`` exact draws from the Gaussian posterior given observations on ``mask``."""
    obs, un = _split(prior, mask)
    mean, _ = conditional_mean(prior, mask, y)
    cov_uu = prior.cov[np.ix_(un, un)]
    if len(obs):
        k_uo = prior.cov[np.ix_(un, obs)]
        cov_uu = cov_uu - k_uo @ scipy.linalg.solve(
            prior.cov[np.ix_(obs, obs)], k_uo.T, assume_a="pos"
        )
    lam, vec = np.linalg.eigh(0.5 * (cov_uu + cov_uu.T))
    root = vec * np.sqrt(np.clip(lam, 0.0, None))
    rng = np.random.default_rng(seed)
    out = np.repeat(mean.reshape(1, -1), n, axis=0)
    out[:, un] += (root @ rng.standard_normal((len(un), n))).T
    return out.reshape((n,) + tuple(prior.shape))
