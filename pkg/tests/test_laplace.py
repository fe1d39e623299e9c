import math

import numpy as np
import pytest

from pyrcodec import autodiff as ad
from pyrcodec import laplace as lp

from conftest import check_gradients


def _density_integral(k, mu, b, samples=200_001):
    """Numeric integration oracle for the interval probability."""
    xs = np.linspace(k - 0.5, k + 0.5, samples)
    pdf = np.exp(-np.abs(xs - mu) / b) / (2 * b)
    return np.trapezoid(pdf, xs)


def test_pmf_center_matches_integration_oracle():
    # sigma = sqrt(2) means scale b = 1
    sigma = math.sqrt(2.0)
    oracle = _density_integral(0, 0.0, 1.0)
    assert oracle == pytest.approx(1 - math.exp(-0.5), abs=1e-9)
    assert float(lp.laplace_pmf(0, 0.0, sigma)) == pytest.approx(oracle, abs=1e-9)
    assert float(lp.laplace_pmf(0, 0.0, sigma)) == pytest.approx(0.393469, abs=1e-6)


def test_pmf_symmetry():
    sigma = 1.7
    for k in range(1, 9):
        assert float(lp.laplace_pmf(k, 0.0, sigma)) == pytest.approx(
            float(lp.laplace_pmf(-k, 0.0, sigma)), rel=1e-12
        )


def test_pmf_matches_oracle_offcenter():
    for k, mu, sigma in [(3, 0.7, 2.0), (-2, -0.3, 0.8), (10, 1.5, 6.0)]:
        b = sigma / math.sqrt(2.0)
        assert float(lp.laplace_pmf(k, mu, sigma)) == pytest.approx(
            _density_integral(k, mu, b), abs=1e-8
        )


def test_pmf_sum_over_wide_range():
    # Direct-summation oracle over [-256, 255]. The two tails are
    # exp(-255.5/b) + exp(-256.5/b) halves, so the 1e-6 bound holds up to
    # sigma = 255.5*sqrt(2)/ln(2e6) ~ 26; at sigma 32 the true deficit is
    # ~1.22e-5 and the assertion reflects that.
    ks = np.arange(-256, 256)
    for sigma in (0.001, 0.1, 1.0, 8.0, 16.0, 26.0):
        assert lp.laplace_pmf(ks, 0.0, sigma).sum() >= 1 - 1e-6
    assert lp.laplace_pmf(ks, 0.0, 32.0).sum() >= 1 - 1.3e-5
    assert lp.laplace_pmf(ks, 0.0, 32.0).sum() < 1 - 1e-6


def test_single_symbol_bits():
    bits = lp.np_bits(np.array([0]), 0.0, math.sqrt(2.0))
    assert bits == pytest.approx(-math.log2(1 - math.exp(-0.5)), abs=1e-6)
    assert bits == pytest.approx(1.34568, abs=1e-4)


def test_bits_monotone_in_sigma_at_mode():
    sigmas = np.geomspace(0.01, 64, 200)
    bits = [lp.np_bits(np.array([0]), 0.0, s) for s in sigmas]
    assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(bits, bits[1:]))


def test_rate_of_empty_pyramid_is_zero():
    from pyrcodec.entropy_model import rate_bits

    assert float(rate_bits([], []).data) == 0.0


def test_prob_floor_clamp_and_counter():
    y = ad.constant(np.array([100.0]))
    mu = ad.constant(np.array([0.0]))
    sigma = ad.constant(np.array([lp.SIGMA_MIN]))
    diag = {}
    p = lp.prob_tensor(y, mu, sigma, diag)
    assert float(p.data[0]) == pytest.approx(lp.PROB_FLOOR)
    assert diag["prob_floor_hits"] == 1


def test_bits_tensor_matches_np_and_gradients(f64):
    rng = np.random.default_rng(4)
    vals = rng.integers(-4, 5, 12).astype(np.float64)
    mu = rng.uniform(-1, 1, 12)
    sigma = rng.uniform(0.5, 3.0, 12)
    t_bits = lp.bits_tensor(ad.constant(vals), ad.constant(mu), ad.constant(sigma))
    assert float(t_bits.data) == pytest.approx(lp.np_bits(vals, mu, sigma), rel=1e-10)

    yt = ad.Tensor(vals + 0.13, requires_grad=True)
    mt = ad.Tensor(mu, requires_grad=True)
    st = ad.Tensor(sigma, requires_grad=True)
    check_gradients(
        lambda: lp.bits_tensor(yt, mt, st), [yt, mt, st], h=1e-4, rtol=1e-4
    )


def test_training_rate_uses_continuous_relaxation():
    # noisy (non-integer) values must be scored by the same interval rule
    y = np.array([0.37])
    direct = lp.laplace_cdf(y + 0.5, 0.0, 1.0) - lp.laplace_cdf(y - 0.5, 0.0, 1.0)
    p = lp.prob_tensor(ad.constant(y), ad.constant([0.0]), ad.constant([1.0]))
    assert float(p.data[0]) == pytest.approx(float(direct[0]), rel=1e-6)
