"""Periodic Gaussian random fields by spectral filtering of white noise."""

import numpy as np

from .spec import GRFParams, PDEKind, check_resolution


def spectral_scaling(n, params):
    """Per-mode amplitude ``amplitude * (1 + |k|^2)^(-exponent/2)`` with the mean mode removed."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    s = params.amplitude * (1.0 + kx**2 + ky**2) ** (-params.exponent / 2.0)
    s[0, 0] = 0.0
    return s


def grf_variance(n, params):
    """Exact per-pixel variance of :func:`sample_grf` at resolution ``n``."""
    return float(np.sum(spectral_scaling(n, params) ** 2))


def sample_grf(params, n, seed):
    """Draw a zero-mean stationary Gaussian field on an ``n x n`` torus.

    White noise is filtered in Fourier space; the ``n`` prefactor makes the
    pixel variance equal to the sum of squared scalings, independent of the
    FFT normalisation.

    Args:
        params: ``GRFParams`` or a ``PDESpec`` (its ``grf`` is used).
        n: resolution, a power of two.
        seed: anything accepted by ``numpy.random.default_rng``.
    """
    if not isinstance(params, GRFParams):
        params = params.grf
    n = check_resolution(n)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, n))
    field = n * np.fft.ifft2(spectral_scaling(n, params) * np.fft.fft2(z)).real
    return field - field.mean()


def threshold_binary(g, tau, low, high):
    """``high`` where ``g >= tau``, ``low`` elsewhere."""
    g = np.asarray(g)
    return np.where(g >= tau, float(high), float(low))


def sample_coefficient(spec, n, seed):
    """Coefficient (or initial vorticity) field for one PDE instance."""
    g = sample_grf(spec.grf, n, seed)
    if spec.kind is PDEKind.DARCY:
        low, high = spec.darcy_levels
        return threshold_binary(g, spec.darcy_threshold, low, high)
    return g
