import numpy as np
import pytest

from vesseldistill import tensor as T
from vesseldistill.tensor import GraphError, ShapeError, Tensor, gradcheck


def rand_tensor(rng, shape, lo=-1.0, hi=1.0, grad=True):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=grad)


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.uniform(size=(2, 6, 6)))
        k = np.zeros((2, 2, 3, 3))
        k[0, 0, 1, 1] = 1.0
        k[1, 1, 1, 1] = 1.0
        out = T.conv2d(x, Tensor(k), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, x.data)

    def test_all_ones_kernel_counts_neighbors(self):
        x = Tensor(np.ones((1, 3, 3)))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, k, Tensor(np.zeros(1)))
        assert out.data[0, 1, 1] == 9.0
        for i, j in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert out.data[0, i, j] == 4.0

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = T.conv2d(Tensor(x), Tensor(k), Tensor(b))

        expected = np.zeros((3, 5, 5))
        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        for co in range(3):
            for i in range(5):
                for j in range(5):
                    acc = b[co]
                    for ci in range(2):
                        for di in range(3):
                            for dj in range(3):
                                acc += k[co, ci, di, dj] * padded[ci, i + di, j + dj]
                    expected[co, i, j] = acc
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rand_tensor(rng, (2, 5, 5))
        k = rand_tensor(rng, (3, 2, 3, 3), lo=-0.5, hi=0.5)
        b = rand_tensor(rng, (3,), lo=-0.5, hi=0.5)
        ok, _ = gradcheck(
            lambda x, k, b: T.tsum(T.sigmoid(T.conv2d(x, k, b))), (x, k, b),
            rtol=1e-4)
        assert ok

    def test_preserves_spatial_shape(self):
        rng = np.random.default_rng(1)
        for h, w in [(1, 1), (1, 7), (4, 4), (5, 9)]:
            x = Tensor(rng.normal(size=(1, h, w)))
            k = Tensor(rng.normal(size=(2, 1, 3, 3)))
            out = T.conv2d(x, k, Tensor(np.zeros(2)))
            assert out.data.shape == (2, h, w)

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((3, 4, 4)))
        k = Tensor(np.zeros((2, 2, 3, 3)))
        with pytest.raises(ShapeError, match="channels"):
            T.conv2d(x, k, Tensor(np.zeros(2)))


def upsample_oracle(src, factor):
    """Scalar reference for half-pixel-center bilinear sampling with edge clamp."""
    h, w = src.shape
    out = np.zeros((h * factor, w * factor))
    for i in range(h * factor):
        for j in range(w * factor):
            sy = min(max((i + 0.5) / factor - 0.5, 0.0), h - 1.0)
            sx = min(max((j + 0.5) / factor - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            wy, wx = sy - y0, sx - x0
            out[i, j] = ((1 - wy) * (1 - wx) * src[y0, x0]
                         + (1 - wy) * wx * src[y0, x1]
                         + wy * (1 - wx) * src[y1, x0]
                         + wy * wx * src[y1, x1])
    return out


class TestBilinearUpsample:
    def test_constant_input(self):
        x = Tensor(np.full((1, 3, 3), 0.7))
        for factor in (1, 2, 4):
            out = T.bilinear_upsample(x, factor)
            np.testing.assert_allclose(out.data, 0.7)

    def test_single_pixel(self):
        out = T.bilinear_upsample(Tensor(np.full((1, 1, 1), 2.5)), 4)
        assert out.data.shape == (1, 4, 4)
        np.testing.assert_allclose(out.data, 2.5)

    def test_2x2_against_sampling_formula(self):
        src = np.array([[0.0, 1.0], [0.0, 1.0]])
        out = T.bilinear_upsample(Tensor(src[None]), 2)
        np.testing.assert_allclose(out.data[0], upsample_oracle(src, 2), rtol=1e-12)

    def test_random_against_oracle(self):
        rng = np.random.default_rng(11)
        src = rng.normal(size=(3, 4))
        out = T.bilinear_upsample(Tensor(src[None]), 4)
        np.testing.assert_allclose(out.data[0], upsample_oracle(src, 4), rtol=1e-12)

    def test_identity_at_factor_1(self):
        x = Tensor(np.arange(6.0).reshape(1, 2, 3))
        np.testing.assert_array_equal(T.bilinear_upsample(x, 1).data, x.data)

    def test_bad_factor_raises(self):
        with pytest.raises(ValueError):
            T.bilinear_upsample(Tensor(np.zeros((1, 2, 2))), 0)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x = rand_tensor(rng, (2, 3, 3))
        ok, _ = gradcheck(
            lambda x: T.tsum(T.sigmoid(T.bilinear_upsample(x, 2))), (x,), rtol=1e-4)
        assert ok


class TestSigmoid:
    def test_zero_maps_to_half(self):
        assert T.sigmoid(Tensor(np.zeros(3))).data[0] == 0.5

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=10) * 5
        total = T.sigmoid(Tensor(x)).data + T.sigmoid(Tensor(-x)).data
        np.testing.assert_allclose(total, 1.0, rtol=1e-12)

    def test_no_overflow_on_extreme_inputs(self):
        out = T.sigmoid(Tensor(np.array([-1e4, 1e4]))).data
        assert np.all(np.isfinite(out))
        assert 0.0 <= out[0] < 1e-10 and 1.0 - 1e-10 < out[1] <= 1.0

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x = rand_tensor(rng, (3, 3), lo=-3, hi=3)
        ok, _ = gradcheck(lambda x: T.tsum(T.sigmoid(x)), (x,), rtol=1e-4)
        assert ok


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        for n in (2, 4, 8):
            p = T.softmax(Tensor(np.full(n, 3.3)), tau=2.0).data
            np.testing.assert_allclose(p, 1.0 / n, rtol=1e-12)

    def test_closed_form_two_logits(self):
        p = T.softmax(Tensor(np.array([1.0, 0.0])), tau=1.0).data
        e = np.e
        np.testing.assert_allclose(p, [e / (e + 1), 1 / (e + 1)], rtol=1e-12)
        np.testing.assert_allclose(p, [0.7311, 0.2689], atol=1e-4)

    def test_huge_logits_stay_finite(self):
        # against an arbitrary-precision oracle
        import mpmath
        logits = np.array([10000.0, 0.0])
        p = T.softmax(Tensor(logits), tau=3.0).data
        assert np.all(np.isfinite(p))
        np.testing.assert_allclose(p.sum(), 1.0, atol=1e-9)
        exact = [mpmath.exp(z / 3) for z in logits]
        total = sum(exact)
        expected = np.array([float(v / total) for v in exact])
        np.testing.assert_allclose(p, expected, atol=1e-12)

    def test_sums_to_one_positive_entries(self):
        rng = np.random.default_rng(9)
        for tau in (0.1, 1.0, 3.0, 100.0):
            for _ in range(20):
                z = rng.normal(size=8) * rng.uniform(0.1, 50)
                p = T.softmax(Tensor(z), tau=tau).data
                assert abs(p.sum() - 1.0) < 1e-9
                assert np.all(p > 0)

    def test_bad_tau_raises(self):
        with pytest.raises(ValueError):
            T.softmax(Tensor(np.ones(2)), tau=0.0)

    def test_gradient(self):
        rng = np.random.default_rng(6)
        z = rand_tensor(rng, (6,), lo=-2, hi=2)
        w = Tensor(np.arange(6.0))
        ok, _ = gradcheck(lambda z: T.tsum(T.softmax(z, tau=3.0) * w), (z,), rtol=1e-4)
        assert ok


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
        T.tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_sum_sigmoid_closed_form(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=8), requires_grad=True)
        T.tsum(T.sigmoid(x)).backward()
        s = 1 / (1 + np.exp(-x.data))
        np.testing.assert_allclose(x.grad, s * (1 - s), rtol=1e-12)

    def test_fanout_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * x + x * 3.0
        T.tsum(y).backward()
        np.testing.assert_allclose(x.grad, [2 * 2.0 + 3.0])

    def test_repeated_backward_is_idempotent(self):
        x = Tensor(np.ones(4), requires_grad=True)
        loss = T.tsum(x * x)
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(x.grad, first)

    def test_non_scalar_loss_raises(self):
        x = Tensor(np.ones(4), requires_grad=True)
        with pytest.raises(GraphError):
            (x * 2.0).backward()

    def test_leaf_backward_raises(self):
        with pytest.raises(GraphError):
            Tensor(np.ones(1), requires_grad=True).backward()


class TestMiscPrimitives:
    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_maxpool_values_and_odd_shape(self):
        x = Tensor(np.arange(16.0).reshape(1, 4, 4))
        out = T.maxpool2x2(x)
        np.testing.assert_array_equal(out.data, [[[5, 7], [13, 15]]])
        with pytest.raises(ShapeError):
            T.maxpool2x2(Tensor(np.zeros((1, 3, 4))))

    def test_clamp_bounds_and_gradient_mask(self):
        x = Tensor(np.array([-2.0, 0.0, 2.0]), requires_grad=True)
        out = T.clamp(x, -1.0, 1.0)
        np.testing.assert_array_equal(out.data, [-1.0, 0.0, 1.0])
        T.tsum(out * out.detach()).backward()
        assert x.grad[0] == 0.0 and x.grad[2] == 0.0

    def test_log_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            T.log(Tensor(np.array([1.0, 0.0])))

    def test_finite_outputs_on_finite_inputs(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(2, 4, 4)) * 100)
        for out in [
            T.relu(x), T.sigmoid(x), T.clamp(x, -5, 5), T.tsum(x), T.tmean(x),
            T.maxpool2x2(x), T.bilinear_upsample(x, 2),
        ]:
            assert np.all(np.isfinite(out.data))

    def test_concat_and_reshape_roundtrip_gradients(self):
        rng = np.random.default_rng(14)
        a = rand_tensor(rng, (1, 2, 2))
        b = rand_tensor(rng, (2, 2, 2))
        ok, _ = gradcheck(
            lambda a, b: T.tsum(T.sigmoid(T.concat([a, b], axis=0).reshape((3, 4)))),
            (a, b), rtol=1e-4)
        assert ok


def test_all_primitives_gradcheck_many_seeds():
    from vesseldistill.checks import primitive_checks
    for seed in range(10):
        for name, fn, inputs in primitive_checks(seed):
            ok, worst = gradcheck(fn, inputs)
            assert ok, f"{name} failed at seed {seed}: worst err {worst}"
