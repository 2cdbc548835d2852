import numpy as np
import pytest

from oracles import (oracle_adaptive_avg_pool2d, oracle_avg_pool2d,
                     oracle_conv2d, oracle_max_pool2d)
from vtnet.nn_ops import (adaptive_avg_pool2d, avg_pool2d, batch_norm,
                          bilinear_upsample, conv2d, cross_entropy,
                          max_pool2d, pool2d)
from vtnet.tensor import ShapeError, Tensor, fd_check, grad


def rand(rng, *shape):
    return rng.normal(0.0, 1.0, shape)


class TestConv2d:
    def test_pointwise_identity(self):
        rng = np.random.default_rng(0)
        x = Tensor(rand(rng, 1, 1, 4, 4))
        w = Tensor(np.ones((1, 1, 1, 1)))
        assert np.array_equal(conv2d(x, w).data, x.data)

    def test_zero_kernel(self):
        rng = np.random.default_rng(1)
        x = Tensor(rand(rng, 2, 3, 5, 5))
        w = Tensor(np.zeros((4, 3, 3, 3)))
        assert not conv2d(x, w, pad=1).data.any()

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        x = rand(rng, 1, 1, 4, 4)
        w = rand(rng, 1, 1, 3, 3)
        out = conv2d(Tensor(x), Tensor(w), stride=1, pad=1)
        assert np.allclose(out.data, oracle_conv2d(x, w, 1, 1), atol=1e-12, rtol=0)

    @pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3),
                                              (2, 0, 1), (1, 2, 5), (2, 3, 7)])
    def test_random_instances_vs_oracle(self, stride, pad, k):
        rng = np.random.default_rng(k * 10 + stride + pad)
        for _ in range(6):
            h = int(rng.integers(k, 9))
            x = rand(rng, 2, 3, h, h)
            w = rand(rng, 4, 3, k, k)
            out = conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad)
            assert np.allclose(out.data, oracle_conv2d(x, w, stride, pad),
                               atol=1e-12, rtol=0)

    def test_bad_geometry(self):
        x = Tensor(np.ones((1, 2, 4, 4)))
        with pytest.raises(ShapeError):
            conv2d(x, Tensor(np.ones((1, 2, 4, 4))))  # even kernel
        with pytest.raises(ShapeError):
            conv2d(x, Tensor(np.ones((1, 3, 3, 3))))  # channel mismatch
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones((1, 2, 5, 5))))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        x = Tensor(rand(rng, 2, 2, 5, 5), requires_grad=True)
        w = Tensor(rand(rng, 3, 2, 3, 3), requires_grad=True)

        def f(ps):
            out = conv2d(ps[0], ps[1], stride=2, pad=1)
            return (out * out).sum()

        assert fd_check(f, [x, w], rng=3) < 1e-8


class TestPooling:
    def test_constant_map_all_modes(self):
        x = Tensor(np.full((1, 2, 6, 6), 3.25))
        assert np.allclose(max_pool2d(x, 3, 2, pad=1).data, 3.25)
        assert np.allclose(avg_pool2d(x, 2, 2).data, 3.25)
        assert np.allclose(adaptive_avg_pool2d(x, 3).data, 3.25)

    def test_max_pool_one_hot(self):
        x = np.zeros((1, 1, 7, 7))
        x[0, 0, 3, 4] = 1.0
        out = max_pool2d(Tensor(x), 3, 2, pad=0).data
        expected = oracle_max_pool2d(x, 3, 2)
        assert np.array_equal(out, expected)
        assert out.max() == 1.0

    def test_adaptive_binning_oracle_on_row_index_map(self):
        h = np.zeros((1, 1, 14, 14))
        h[0, 0] = np.arange(14)[:, None]
        out = adaptive_avg_pool2d(Tensor(h), 4).data
        assert np.allclose(out, oracle_adaptive_avg_pool2d(h, 4), atol=1e-12, rtol=0)

    def test_random_instances_vs_oracles(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            h = int(rng.integers(4, 9))
            x = rand(rng, 2, 2, h, h)
            assert np.allclose(max_pool2d(Tensor(x), 3, 2, pad=1).data,
                               oracle_max_pool2d(x, 3, 2, 1), atol=0, rtol=0)
            assert np.allclose(avg_pool2d(Tensor(x), 2, 2).data,
                               oracle_avg_pool2d(x, 2, 2), atol=1e-12, rtol=0)
            target = int(rng.integers(1, h + 1))
            assert np.allclose(adaptive_avg_pool2d(Tensor(x), target).data,
                               oracle_adaptive_avg_pool2d(x, target), atol=1e-12, rtol=0)

    def test_pool2d_dispatch_and_errors(self):
        x = Tensor(np.ones((1, 1, 4, 4)))
        assert pool2d(x, "max", 2).shape == (1, 1, 2, 2)
        assert pool2d(x, "avg", 2).shape == (1, 1, 2, 2)
        assert pool2d(x, "adaptive-avg", 2).shape == (1, 1, 2, 2)
        with pytest.raises(ValueError):
            pool2d(x, "median", 2)
        with pytest.raises(ShapeError):
            adaptive_avg_pool2d(x, 9)

    def test_gradients(self):
        rng = np.random.default_rng(5)
        x = Tensor(rand(rng, 1, 2, 6, 6), requires_grad=True)
        for op in (lambda t: max_pool2d(t, 3, 2, pad=1),
                   lambda t: avg_pool2d(t, 2, 2),
                   lambda t: adaptive_avg_pool2d(t, 4)):
            err = fd_check(lambda ps: (op(ps[0]) * op(ps[0])).sum(), [x], rng=5)
            assert err < 1e-8


class TestBatchNorm:
    def _fresh(self, c, dtype=np.float64):
        gamma = Tensor(np.ones(c), requires_grad=True)
        beta = Tensor(np.zeros(c), requires_grad=True)
        return gamma, beta, np.zeros(c), np.ones(c)

    def test_standardized_input_passes_through(self):
        rng = np.random.default_rng(6)
        x = rand(rng, 8, 3, 5, 5)
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        gamma, beta, rm, rv = self._fresh(3)
        out = batch_norm(Tensor(x), gamma, beta, rm, rv, training=True)
        assert np.allclose(out.data, x, atol=1e-4)

    def test_zero_gamma_yields_beta(self):
        rng = np.random.default_rng(7)
        gamma = Tensor(np.zeros(2), requires_grad=True)
        beta = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        out = batch_norm(Tensor(rand(rng, 4, 2, 3, 3)), gamma, beta,
                         np.zeros(2), np.ones(2), training=True)
        assert np.allclose(out.data, beta.data[None, :, None, None], atol=1e-12)

    def test_train_mode_moments(self):
        rng = np.random.default_rng(8)
        x = rand(rng, 16, 4, 6, 6) * 3.0 + 1.0
        gamma, beta, rm, rv = self._fresh(4)
        out = batch_norm(Tensor(x), gamma, beta, rm, rv, training=True).data
        assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        assert np.allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_running_stats_update_and_eval(self):
        rng = np.random.default_rng(9)
        x = rand(rng, 8, 2, 4, 4)
        gamma, beta, rm, rv = self._fresh(2)
        batch_norm(Tensor(x), gamma, beta, rm, rv, training=True)
        assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
        assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-12)
        eval_out = batch_norm(Tensor(x), gamma, beta, rm, rv, training=False).data
        expected = (x - rm[None, :, None, None]) / np.sqrt(rv + 1e-5)[None, :, None, None]
        assert np.allclose(eval_out, expected, atol=1e-12)

    def test_gradients_train_and_eval(self):
        rng = np.random.default_rng(10)
        x = Tensor(rand(rng, 4, 3, 3, 3), requires_grad=True)
        gamma = Tensor(rand(rng, 3), requires_grad=True)
        beta = Tensor(rand(rng, 3), requires_grad=True)
        for training in (True, False):
            rm, rv = np.zeros(3), np.ones(3)

            def f(ps, training=training, rm=rm, rv=rv):
                out = batch_norm(ps[0], ps[1], ps[2], rm.copy(), rv.copy(), training)
                return (out * out).sum()

            assert fd_check(f, [x, gamma, beta], rng=10) < 1e-7


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = cross_entropy(Tensor(np.zeros((4, 3))), np.array([0, 1, 2, 0]))
        assert np.allclose(loss.data, np.log(3.0), atol=1e-12)

    def test_matches_manual_computation(self):
        rng = np.random.default_rng(11)
        z = rand(rng, 5, 4)
        labels = np.array([0, 3, 1, 2, 2])
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        expected = -np.mean(np.log(p[np.arange(5), labels]))
        assert np.allclose(cross_entropy(Tensor(z), labels).data, expected, atol=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(12)
        z = Tensor(rand(rng, 6, 4), requires_grad=True)
        labels = np.array([1, 0, 3, 2, 1, 0])
        err = fd_check(lambda ps: cross_entropy(ps[0], labels), [z], rng=12)
        assert err < 1e-8


class TestBilinearUpsample:
    def test_constant_preserved(self):
        out = bilinear_upsample(Tensor(np.full((1, 2, 3, 3), 2.5)), 4)
        assert np.allclose(out.data, 2.5, atol=1e-12)
        assert out.shape == (1, 2, 12, 12)

    def test_gradient_is_adjoint(self):
        rng = np.random.default_rng(13)
        x = Tensor(rand(rng, 1, 2, 3, 3), requires_grad=True)

        def f(ps):
            out = bilinear_upsample(ps[0], 2)
            return (out * out).sum()

        assert fd_check(f, [x], rng=13) < 1e-8
