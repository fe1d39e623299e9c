import numpy as np
import pytest

from pyrcodec import autodiff as ad
from pyrcodec.errors import ContractViolation

from conftest import away_from_kinks, check_gradients


def test_linear_identity():
    x = ad.Tensor([[1.0, 0.0]])
    w = ad.Tensor([[1.0, 0.0], [0.0, 1.0]])
    b = ad.Tensor([0.0, 0.0])
    assert np.array_equal(ad.linear(x, w, b).data, [[1.0, 0.0]])


def test_linear_scalar_affine():
    y = ad.linear(ad.Tensor([[2.0]]), ad.Tensor([[3.0]]), ad.Tensor([1.0]))
    assert np.array_equal(y.data, [[7.0]])


def test_linear_shape_mismatch():
    with pytest.raises(ContractViolation):
        ad.linear(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))


def test_linear_gradient_column_sums_and_fd(f64):
    rng = np.random.default_rng(0)
    x = ad.Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    w = ad.Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    ad.backward(ad.sum_(ad.linear(x, w)))
    assert np.allclose(x.grad, np.tile(w.data.sum(axis=0), (4, 1)))
    check_gradients(lambda: ad.sum_(ad.linear(x, w)), [x, w], h=1e-3, rtol=1e-4)


def test_separable_dirac_identity():
    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.uniform(-1, 1, (3, 6, 6)))
    dw = np.zeros((3, 3, 3), dtype=np.float32)
    dw[:, 1, 1] = 1.0
    y = ad.separable_conv2d(x, ad.Tensor(dw), ad.Tensor(np.eye(3)))
    assert np.allclose(y.data, x.data, atol=1e-6)


def test_separable_box_filter_on_ones():
    x = ad.Tensor(np.ones((1, 3, 3)))
    y = ad.separable_conv2d(x, ad.Tensor(np.ones((1, 3, 3))), ad.Tensor([[1.0]]))
    assert y.data[0, 1, 1] == pytest.approx(9.0)
    assert y.data[0, 0, 0] == pytest.approx(4.0)


def test_separable_even_kernel_rejected():
    x = ad.Tensor(np.ones((1, 4, 4)))
    with pytest.raises(ContractViolation):
        ad.separable_conv2d(x, ad.Tensor(np.ones((1, 4, 4))), ad.Tensor([[1.0]]))


def test_separable_gradients(f64):
    rng = np.random.default_rng(2)
    x = ad.Tensor(away_from_kinks(rng, (2, 5, 5)), requires_grad=True)
    dw = ad.Tensor(rng.uniform(-1, 1, (2, 3, 3)), requires_grad=True)
    pw = ad.Tensor(rng.uniform(-1, 1, (2, 2)), requires_grad=True)
    wt = ad.constant(rng.standard_normal((2, 5, 5)))
    check_gradients(
        lambda: ad.sum_(ad.mul(ad.separable_conv2d(x, dw, pw), wt)),
        [x, dw, pw], h=1e-3, rtol=1e-4,
    )


def test_transposed_conv_single_tap():
    x = ad.Tensor(np.ones((1, 1, 1)))
    w = ad.Tensor(np.ones((1, 1, 2, 2)))
    y = ad.transposed_conv2d(x, w, 2)
    assert y.data.shape == (1, 2, 2)
    assert np.allclose(y.data, 1.0)


def test_transposed_conv_zero_input():
    y = ad.transposed_conv2d(
        ad.Tensor(np.zeros((2, 3, 3))), ad.Tensor(np.ones((2, 4, 4, 4)) * 0.3), 2
    )
    assert np.all(y.data == 0)
    assert y.data.shape == (4, 6, 6)


def test_transposed_conv_kernel_covers_stride():
    with pytest.raises(ContractViolation):
        ad.transposed_conv2d(
            ad.Tensor(np.ones((1, 2, 2))), ad.Tensor(np.ones((1, 1, 1, 1))), 2
        )


def test_transposed_conv_gradients(f64):
    rng = np.random.default_rng(3)
    x = ad.Tensor(rng.uniform(-1, 1, (1, 3, 3)), requires_grad=True)
    w = ad.Tensor(rng.uniform(-1, 1, (1, 2, 4, 4)), requires_grad=True)
    wt = ad.constant(rng.standard_normal((2, 6, 6)))
    check_gradients(
        lambda: ad.sum_(ad.mul(ad.transposed_conv2d(x, w, 2), wt)),
        [x, w], h=1e-3, rtol=1e-4,
    )
    # odd-extent center crop
    wt5 = ad.constant(rng.standard_normal((2, 5, 5)))
    check_gradients(
        lambda: ad.sum_(ad.mul(ad.transposed_conv2d(x, w, 2, (5, 5)), wt5)),
        [x, w], h=1e-3, rtol=1e-4,
    )


def test_relu_and_mse_examples():
    assert np.array_equal(ad.relu(ad.Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    x = ad.Tensor(np.random.default_rng(0).uniform(-1, 1, (3, 4)))
    assert float(ad.mse(x, x).data) == 0.0
    assert float(ad.mse(ad.Tensor([0.0]), ad.Tensor([1.0])).data) == 1.0
    with pytest.raises(ContractViolation):
        ad.mse(ad.Tensor([0.0]), ad.Tensor([[1.0]]))


@pytest.mark.parametrize("op", ["relu", "exp", "log", "abs", "clamp", "mean"])
def test_elementwise_gradients(op, f64):
    rng = np.random.default_rng(hash(op) % 2 ** 32)
    x = ad.Tensor(away_from_kinks(rng, (3, 4)), requires_grad=True)
    if op == "log":
        x.data = np.abs(x.data) + 0.5
    fns = {
        "relu": lambda: ad.sum_(ad.relu(x)),
        "exp": lambda: ad.sum_(ad.exp(x)),
        "log": lambda: ad.sum_(ad.log(x)),
        "abs": lambda: ad.sum_(ad.abs_(x)),
        "clamp": lambda: ad.sum_(ad.clamp(x, -0.8, 0.8)),
        "mean": lambda: ad.mean_(ad.mul(x, x)),
    }
    # keep clamp boundaries away from sampled points
    if op == "clamp":
        x.data = np.where(np.abs(np.abs(x.data) - 0.8) < 0.01, 0.5, x.data)
    check_gradients(fns[op], [x], h=1e-3, rtol=1e-4)


def test_conv2d_and_shape_ops_gradients(f64):
    rng = np.random.default_rng(11)
    x = ad.Tensor(away_from_kinks(rng, (3, 5, 4)), requires_grad=True)
    w = ad.Tensor(rng.uniform(-1, 1, (2, 3, 3, 3)), requires_grad=True)
    wt = ad.constant(rng.standard_normal((2, 5, 4)))

    def f():
        y = ad.conv2d(x, w)
        y = ad.pad2d(y, (1, 0, 2, 1))
        y = ad.crop2d(y, 1, 2, 5, 4)
        return ad.sum_(ad.mul(y, wt))

    check_gradients(f, [x, w], h=1e-3, rtol=1e-4)


def test_matmul_div_permute_gradients(f64):
    rng = np.random.default_rng(12)
    a = ad.Tensor(rng.uniform(0.5, 1.5, (3, 4)), requires_grad=True)
    b = ad.Tensor(rng.uniform(0.5, 1.5, (4, 2)), requires_grad=True)

    def f():
        y = ad.matmul(a, b)
        y = ad.div(y, ad.constant(np.full((3, 2), 2.0)))
        y = ad.permute(y, (1, 0))
        return ad.sum_(ad.mul(y, y))

    check_gradients(f, [a, b], h=1e-4, rtol=1e-4)


def test_backward_fixed_input_gradient():
    x = np.array([1.0, -2.0, 3.0], dtype=np.float32)
    w = ad.Parameter(np.zeros(3), "latent")
    loss = ad.sum_(ad.mul(w.t, ad.constant(x)))
    ad.backward(loss)
    assert np.allclose(w.t.grad, x)


def test_backward_unused_parameter_stays_put():
    used = ad.Parameter(np.ones(2), "latent")
    unused = ad.Parameter(np.full(2, 5.0), "latent")
    ad.backward(ad.sum_(ad.mul(used.t, used.t)))
    assert unused.t.grad is None  # treated as all zeros by the optimizer
    ad.adam_step([used, unused], 0.1)
    assert np.array_equal(unused.data, [5.0, 5.0])


def test_backward_requires_scalar():
    t = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractViolation):
        ad.backward(ad.mul(t, 2.0))


def test_backward_accumulates():
    p = ad.Parameter(np.ones(2), "latent")
    for _ in range(2):
        ad.backward(ad.sum_(ad.mul(p.t, 3.0)))
    assert np.allclose(p.t.grad, [6.0, 6.0])


def test_adam_first_step_moves_by_lr():
    p = ad.Parameter(np.zeros(()), "latent")
    ad.backward(ad.mul(p.t, 1.0))
    ad.adam_step([p], 0.1)
    assert float(p.data) == pytest.approx(-0.1, rel=1e-4)


def test_adam_zero_grad_leaves_parameter():
    p = ad.Parameter(np.full((2,), 1.5), "latent")
    q = ad.Parameter(np.zeros(()), "latent")
    ad.backward(ad.mul(q.t, 1.0))
    p.t.grad = np.zeros_like(p.data)
    ad.adam_step([p, q], 0.1)
    assert np.array_equal(p.data, [1.5, 1.5])


def test_adam_missing_grads_rejected():
    p = ad.Parameter(np.zeros(2), "latent")
    with pytest.raises(ContractViolation):
        ad.adam_step([p], 0.1)


def test_adam_converges_convex_scalar():
    p = ad.Parameter(np.zeros(()), "latent")
    target = ad.constant(np.full((), 3.0))
    for _ in range(100):
        ad.backward(ad.mse(p.t, target))
        ad.adam_step([p], 0.3)
    assert abs(float(p.data) - 3.0) < 1e-2


def test_forward_purity():
    rng = np.random.default_rng(5)
    x = ad.Tensor(rng.uniform(-1, 1, (3, 8, 8)))
    w = ad.Tensor(rng.uniform(-1, 1, (4, 3, 3, 3)))
    a = ad.conv2d(x, w).data
    b = ad.conv2d(x, w).data
    assert np.array_equal(a, b)


def test_concat_split_identity():
    rng = np.random.default_rng(6)
    xs = [ad.Tensor(rng.uniform(-1, 1, (c, 4, 4))) for c in (1, 2, 3)]
    merged = ad.concat_channels(xs)
    parts = ad.split_channels(merged, [1, 2, 3])
    for orig, back in zip(xs, parts):
        assert np.array_equal(orig.data, back.data)
    with pytest.raises(ContractViolation):
        ad.split_channels(merged, [1, 2])


def test_concat_mismatch_rejected():
    with pytest.raises(ContractViolation):
        ad.concat_channels([ad.Tensor(np.ones((1, 4, 4))), ad.Tensor(np.ones((1, 3, 4)))])


def test_round_ste_forward_and_grad():
    x = ad.Tensor([0.7, -0.5, 2.5, -1.2], requires_grad=True)
    y = ad.round_ste(x)
    assert np.array_equal(y.data, [1.0, -1.0, 3.0, -1.0])
    ad.backward(ad.sum_(y))
    assert np.array_equal(x.grad, np.ones(4))


def test_no_grad_blocks_tape():
    p = ad.Parameter(np.ones(3), "latent")
    with ad.no_grad():
        y = ad.mul(p.t, 2.0)
    assert not y.requires_grad
