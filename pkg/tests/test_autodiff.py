import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmgan import autodiff as ad
from dmgan.autodiff import Tensor


def naive_conv3x3(x, k, b, stride=1):
    C, H, W = x.shape
    Co = k.shape[0]
    Ho, Wo = (H - 1) // stride + 1, (W - 1) // stride + 1
    out = np.zeros((Co, Ho, Wo))
    for o in range(Co):
        for i in range(Ho):
            for j in range(Wo):
                acc = b[o]
                for c in range(C):
                    for di in range(3):
                        for dj in range(3):
                            y, xx = i * stride + di - 1, j * stride + dj - 1
                            if 0 <= y < H and 0 <= xx < W:
                                acc += k[o, c, di, dj] * x[c, y, xx]
                out[o, i, j] = acc
    return out


def weighted_sum(t, rng):
    """Scalar with a non-trivial gradient: sum(t * fixed random weights)."""
    w = rng.normal(size=t.shape)
    return ad.sum(t * w)


# -- matmul ----------------------------------------------------------------

def test_matmul_identity():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(np.eye(2), b).data, b)


def test_matmul_by_hand():
    assert ad.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_gradcheck():
    rng = np.random.default_rng(0)
    with ad.precision(np.float64):
        a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(4, 2)))
        assert ad.gradcheck(lambda: ad.sum(ad.matmul(a, b)), [a, b]) < 1e-6
        assert ad.gradcheck(lambda: weighted_sum(ad.matmul(a, b), np.random.default_rng(1)), [a, b]) < 1e-6


def test_batched_matmul_gradcheck():
    rng = np.random.default_rng(2)
    with ad.precision(np.float64):
        a = Tensor(rng.normal(size=(2, 3, 4)))
        shared, batched = Tensor(rng.normal(size=(4, 2))), Tensor(rng.normal(size=(2, 4, 5)))
        assert ad.gradcheck(lambda: weighted_sum(ad.matmul(a, shared), np.random.default_rng(3)), [a, shared]) < 1e-6
        assert ad.gradcheck(lambda: weighted_sum(ad.matmul(a, batched), np.random.default_rng(3)), [a, batched]) < 1e-6


# -- conv3x3 -----------------------------------------------------------------

def test_conv_zero_kernel():
    x = np.random.default_rng(0).normal(size=(2, 4, 4))
    out = ad.conv3x3(x, np.zeros((3, 2, 3, 3)), np.zeros(3))
    assert out.shape == (3, 4, 4) and not out.data.any()


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 5, 6))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    with ad.precision(np.float64):
        np.testing.assert_array_equal(ad.conv3x3(x, k, np.zeros(1)).data, x)


@pytest.mark.parametrize("shape", [(2, 4, 4), (4, 8, 8), (3, 5, 7)])
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loop_oracle(shape, stride):
    rng = np.random.default_rng(sum(shape) + stride)
    x = rng.normal(size=shape)
    k = rng.normal(size=(3, shape[0], 3, 3))
    b = rng.normal(size=3)
    with ad.precision(np.float64):
        got = ad.conv3x3(x, k, b, stride=stride).data
    assert np.abs(got - naive_conv3x3(x, k, b, stride)).max() < 1e-6


def test_conv_batched_equals_unbatched():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 2, 6, 6))
    k, b = rng.normal(size=(4, 2, 3, 3)), rng.normal(size=4)
    with ad.precision(np.float64):
        batched = ad.conv3x3(x, k, b).data
        for i in range(3):
            np.testing.assert_allclose(batched[i], ad.conv3x3(x[i], k, b).data, atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.conv3x3(np.ones((2, 4, 4)), np.ones((1, 3, 3, 3)), np.zeros(1))


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradcheck(stride):
    rng = np.random.default_rng(11)
    with ad.precision(np.float64):
        x = Tensor(rng.normal(size=(2, 2, 5, 4)))
        k, b = Tensor(rng.normal(size=(3, 2, 3, 3))), Tensor(rng.normal(size=3))
        w = rng.normal(size=ad.conv3x3(x, k, b, stride=stride).shape)
        assert ad.gradcheck(lambda: ad.sum(ad.conv3x3(x, k, b, stride=stride) * w), [x, k, b]) < 1e-6


# -- upsampling / pooling -------------------------------------------------------

def test_upsample_single_pixel():
    assert ad.nearest_upsample([[[1.0]]]).data.tolist() == [[[1, 1], [1, 1]]]


def test_upsample_by_hand():
    out = ad.nearest_upsample([[[1.0, 2.0], [3.0, 4.0]]]).data[0]
    expected = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
    assert out.tolist() == expected


def test_upsample_gradcheck():
    rng = np.random.default_rng(3)
    with ad.precision(np.float64):
        x = Tensor(rng.normal(size=(1, 2, 2)))
        w = rng.normal(size=(1, 4, 4))
        assert ad.gradcheck(lambda: ad.sum(ad.nearest_upsample(x) * w), [x]) < 1e-6


def test_avg_pool_gradcheck():
    rng = np.random.default_rng(4)
    with ad.precision(np.float64):
        x = Tensor(rng.normal(size=(2, 1, 4, 6)))
        w = rng.normal(size=(2, 1, 2, 3))
        assert ad.gradcheck(lambda: ad.sum(ad.avg_pool2x2(x) * w), [x]) < 1e-6


# -- softmax ------------------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(np.zeros(5)).data, np.full(5, 0.2), atol=1e-7)


def test_softmax_closed_form():
    with ad.precision(np.float64):
        out = ad.softmax([0.0, np.log(3.0)]).data
    np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)


def test_softmax_no_overflow():
    out = ad.softmax(np.array([1e4, 0.0, -1e4])).data
    assert np.all(np.isfinite(out)) and abs(out.sum() - 1) < 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)), st.floats(-100, 100), st.sampled_from([0, 1]))
def test_softmax_properties(x, c, axis):
    with ad.precision(np.float64):
        out = ad.softmax(x, axis=axis).data
        shifted = ad.softmax(x + c, axis=axis).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=axis), 1.0, atol=1e-6)
    np.testing.assert_allclose(shifted, out, atol=1e-9)


def test_softmax_gradcheck():
    rng = np.random.default_rng(6)
    with ad.precision(np.float64):
        x = Tensor(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        for axis in (0, 1):
            assert ad.gradcheck(lambda: ad.sum(ad.softmax(x, axis=axis) * w), [x]) < 1e-6
            assert ad.gradcheck(lambda: ad.sum(ad.log_softmax(x, axis=axis) * w), [x]) < 1e-6


# -- pointwise -------------------------------------------------------------------

def test_sigmoid_tanh_at_zero():
    assert ad.sigmoid(0.0).item() == 0.5
    assert ad.tanh(0.0).item() == 0.0


def test_log_domain_error():
    with pytest.raises(ad.DomainError):
        ad.log([1.0, 0.0])
    with pytest.raises(ad.DomainError):
        ad.log([-1.0])


def test_clamped_log_is_finite():
    out = ad.log([0.0, 1.0], floor=1e-12)
    assert np.all(np.isfinite(out.data))


@pytest.mark.parametrize("name", ["sigmoid", "tanh", "relu", "leaky_relu", "exp", "log", "sqrt"])
def test_pointwise_gradcheck(name):
    rng = np.random.default_rng(7)
    with ad.precision(np.float64):
        data = rng.normal(size=(3, 3))
        if name in ("log", "sqrt"):
            data = np.abs(data) + 0.5
        else:
            data = np.where(np.abs(data) < 1e-3, 0.5, data)  # keep clear of the relu kink
        x = Tensor(data)
        w = rng.normal(size=(3, 3))
        assert ad.gradcheck(lambda: ad.sum(ad.pointwise(x, name) * w), [x]) < 1e-6


def test_sigmoid_large_inputs():
    out = ad.sigmoid(np.array([-1000.0, 1000.0])).data
    assert out.tolist() == [0.0, 1.0]


# -- reductions and shape -----------------------------------------------------------

def test_mean_and_concat():
    assert ad.mean([2.0, 4.0, 6.0]).item() == 4.0
    assert ad.concat([[1.0], [2.0]], axis=0).data.tolist() == [1.0, 2.0]


def test_concat_shape_error():
    with pytest.raises(ad.DimensionError):
        ad.concat([np.ones((2, 3)), np.ones((3, 2))], axis=0)


def test_reshape_preserves_sum():
    x = np.arange(12.0)
    assert ad.sum(ad.reshape(x, (3, 4))).item() == x.sum()


def test_reshape_error():
    with pytest.raises(ad.DimensionError):
        ad.reshape(np.ones(5), (2, 3))


def test_shape_ops_gradcheck():
    rng = np.random.default_rng(8)
    with ad.precision(np.float64):
        a, b = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(2, 2)))
        w = rng.normal(size=(5, 2))

        def fn():
            c = ad.concat([a, b], axis=1)              # 2×5
            t = ad.transpose(c)                        # 5×2
            m = ad.mean(ad.reshape(t, (5, 2, 1)), axis=2)
            return ad.sum(m * w) + ad.sum(ad.mean(a, axis=0)) + ad.sum(a[:, 1:] * 2.0)

        assert ad.gradcheck(fn, [a, b]) < 1e-6


def test_broadcast_arithmetic_gradcheck():
    rng = np.random.default_rng(9)
    with ad.precision(np.float64):
        a, b = Tensor(rng.normal(size=(3, 4))), Tensor(rng.uniform(1, 2, size=(4,)))
        w = rng.normal(size=(3, 4))
        assert ad.gradcheck(lambda: ad.sum(((a + b) * b - a / b) * w), [a, b]) < 1e-6


# -- backward ------------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    ad.sum(x * x).backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ad.ContractError):
        (x * 2.0).backward()


def test_shared_subexpression_visited_once():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    (y + y).backward()
    assert x.grad.tolist() == [8.0]


def test_backward_is_deterministic():
    rng = np.random.default_rng(10)
    x = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
    k = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)

    def run():
        x.grad = k.grad = None
        loss = ad.sum(ad.tanh(ad.conv3x3(x, k)) * 1.5)
        loss.backward()
        return x.grad.copy(), k.grad.copy()

    g1, g2 = run(), run()
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_float32_default_and_float64_mode():
    assert Tensor([1.0]).dtype == np.float32
    with ad.precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32
