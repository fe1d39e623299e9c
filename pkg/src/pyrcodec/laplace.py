"""Discretized Laplace symbol model.

P(k) = F(k+0.5) - F(k-0.5) under a Laplace CDF with mean mu and scale
b = sigma / sqrt(2), so sigma keeps its standard-deviation meaning.
Probabilities below PROB_FLOOR are clamped (and counted) so the rate stays
finite on out-of-model symbols.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad

SIGMA_MIN = 1e-3
SIGMA_MAX = 64.0
PROB_FLOOR = 2.0 ** -32
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_LN2 = math.log(2.0)


def laplace_cdf(x, mu, sigma):
    """Numpy CDF, vectorized over any broadcastable shapes (float64 math)."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    b = np.asarray(sigma, dtype=np.float64) * _INV_SQRT2
    t = (x - mu) / b
    e = 0.5 * np.exp(-np.abs(t))
    return np.where(t < 0, e, 1.0 - e)


def laplace_pmf(k, mu, sigma):
    """Probability of integer symbol k (float64, vectorized)."""
    k = np.asarray(k, dtype=np.float64)
    return laplace_cdf(k + 0.5, mu, sigma) - laplace_cdf(k - 0.5, mu, sigma)


def np_bits(values, mu, sigma):
    """Total -log2 P over an array of symbols; diagnostics-free fast path."""
    p = np.maximum(laplace_pmf(values, mu, sigma), PROB_FLOOR)
    return float(-np.log2(p).sum())


def _cdf_tensor(t):
    """F applied to the normalized argument tensor t = (x - mu) / b."""
    e = ad.exp(ad.neg(ad.abs_(t)))
    negside = (t.data < 0)
    scale = np.where(negside, 0.5, -0.5).astype(t.data.dtype)
    base = np.where(negside, 0.0, 1.0).astype(t.data.dtype)
    return ad.add(ad.constant(base), ad.mul(e, ad.constant(scale)))


def prob_tensor(y, mu, sigma, diag=None):
    """Differentiable interval probability of (possibly continuous) symbols."""
    b = ad.mul(sigma, _INV_SQRT2)
    centered = ad.sub(y, mu)
    hi = ad.div(ad.add(centered, 0.5), b)
    lo = ad.div(ad.sub(centered, 0.5), b)
    p = ad.sub(_cdf_tensor(hi), _cdf_tensor(lo))
    if diag is not None:
        diag["prob_floor_hits"] = diag.get("prob_floor_hits", 0) + int(
            (p.data < PROB_FLOOR).sum()
        )
    return ad.clamp(p, PROB_FLOOR, 1.0)


def bits_tensor(y, mu, sigma, diag=None):
    """Differentiable total bits -sum log2 P(y | mu, sigma)."""
    p = prob_tensor(y, mu, sigma, diag)
    return ad.mul(ad.sum_(ad.log(p)), -1.0 / _LN2)
