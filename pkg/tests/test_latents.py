import numpy as np
import pytest

from pyrcodec import autodiff as ad
from pyrcodec import latents as lat
from pyrcodec.errors import ContractViolation


def test_pyramid_geometry_8_3():
    assert lat.level_extents(8, 8, 3) == [(2, 2), (4, 4), (8, 8)]


def test_pyramid_geometry_kodak():
    ext = lat.level_extents(512, 768, 7)
    assert ext[0] == (8, 12)
    assert ext[-1] == (512, 768)


def test_pyramid_geometry_ceil_rule():
    assert lat.level_extents(5, 5, 2) == [(3, 3), (5, 5)]


def test_pyramid_dyadic_doubling_and_final_level():
    ext = lat.level_extents(64, 32, 5)
    for (h0, w0), (h1, w1) in zip(ext, ext[1:]):
        assert (h1, w1) == (2 * h0, 2 * w0)
    assert ext[-1] == (64, 32)


def test_init_pyramid_rejects_zero_levels():
    with pytest.raises(ContractViolation):
        lat.init_pyramid(8, 8, 0)


def test_init_pyramid_zeros():
    pyr = lat.init_pyramid(8, 8, 3)
    assert [p.data.shape for p in pyr.levels] == [(1, 2, 2), (1, 4, 4), (1, 8, 8)]
    assert all(np.all(p.data == 0) for p in pyr.levels)


def test_symbol_count_summation():
    assert lat.total_symbols(lat.level_extents(8, 8, 3)) == 4 + 16 + 64 == 84


def test_quantize_uniform_examples():
    assert lat.quantize_uniform(0.4) == 0
    assert lat.quantize_uniform(-0.5) == -1
    assert lat.quantize_uniform(2.5) == 3


def test_quantize_uniform_idempotent():
    rng = np.random.default_rng(0)
    y = rng.uniform(-50, 50, 1000)
    q = lat.quantize_uniform(y)
    assert np.array_equal(lat.quantize_uniform(q.astype(np.float64)), q)


def test_quantize_uniform_rejects_nonfinite():
    with pytest.raises(ContractViolation):
        lat.quantize_uniform(float("nan"))
    with pytest.raises(ContractViolation):
        lat.quantize_uniform(np.array([1.0, np.inf]))


def test_relax_noise_support_and_gradient():
    rng = np.random.default_rng(1)
    y = ad.Tensor(np.zeros((1, 40, 40)), requires_grad=True)
    out = lat.relax_noise(y, rng)
    diff = out.data - y.data
    assert np.all(diff >= -0.5) and np.all(diff < 0.5)
    ad.backward(ad.sum_(out))
    assert np.array_equal(y.grad, np.ones_like(y.data))


def test_relax_noise_mean():
    rng = np.random.default_rng(2)
    y = ad.Tensor(np.zeros(100_000))
    out = lat.relax_noise(y, rng)
    assert abs(float(out.data.mean())) < 0.01


def test_relax_noise_seeded_reproducibility():
    y = ad.Tensor(np.zeros(64))
    a = lat.relax_noise(y, np.random.default_rng(7)).data
    b = lat.relax_noise(y, np.random.default_rng(7)).data
    assert np.array_equal(a, b)


def test_relax_ste_forward_and_grad():
    y = ad.Tensor([0.7], requires_grad=True)
    out = lat.relax_ste(y)
    assert out.data[0] == 1.0
    ad.backward(ad.sum_(out))
    assert np.array_equal(y.grad, [1.0])


def test_relax_ste_optimization_smoke():
    # rounding in the forward pass still lets the optimizer make progress
    p = ad.Parameter(np.zeros(()), "latent")
    target = ad.constant(np.full((), 3.7))
    losses = []
    for _ in range(200):
        lv = ad.mse(lat.relax_ste(p.t), target)
        losses.append(float(lv.data))
        ad.backward(lv)
        ad.adam_step([p], 0.01)
    windows = [np.mean(losses[i:i + 50]) for i in range(0, 200, 50)]
    assert all(b < a for a, b in zip(windows, windows[1:]))


def test_positional_encoding_values():
    pe = lat.positional_encoding(2, 2)
    assert pe[0, 0, 0] == pytest.approx(-0.5)
    assert pe[1, 0, 0] == pytest.approx(-0.5)
    pe4 = lat.positional_encoding(4, 4)
    assert pe4[0, 2, 0] == pytest.approx(0.0)
    assert np.all(pe4 >= -0.5) and np.all(pe4 < 0.5)


def test_level_encoding():
    assert lat.level_encoding(0, 7) == 0.0
    assert lat.level_encoding(3, 7) == pytest.approx(6 / 7)
    assert lat.level_encoding(6, 7) == pytest.approx(12 / 7)
    with pytest.raises(ContractViolation):
        lat.level_encoding(7, 7)


def test_checkerboard_split_values():
    g = np.array([[1, 2], [3, 4]])
    anchors, non = lat.checkerboard_split(g)
    assert np.array_equal(anchors, [1, 4])
    assert np.array_equal(non, [2, 3])


def test_checkerboard_roundtrip():
    rng = np.random.default_rng(3)
    for h, w in [(2, 2), (5, 7), (1, 1), (8, 3)]:
        g = rng.integers(-5, 5, (h, w))
        a, n = lat.checkerboard_split(g)
        assert np.array_equal(lat.checkerboard_merge(a, n, (h, w)), g)


def test_checkerboard_anchor_count():
    for h, w in [(2, 2), (5, 7), (8, 8), (3, 4)]:
        a, n = lat.checkerboard_split(np.zeros((h, w)))
        assert a.size == -(-h * w // 2)  # ceil(HW/2)
        assert a.size + n.size == h * w


def test_checkerboard_merge_mismatch():
    with pytest.raises(ContractViolation):
        lat.checkerboard_merge(np.zeros(3), np.zeros(1), (2, 2))


def test_merge_grids_parity_rule():
    a = np.full((3, 3), 1.0)
    b = np.full((3, 3), 2.0)
    m = lat.merge_grids(a, b)
    assert m[0, 0] == 1.0 and m[0, 1] == 2.0 and m[1, 1] == 1.0
