import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_matmul
from vtnet.tensor import (NumericsError, ShapeError, Tensor, concat, fd_check,
                          grad, matmul, narrow, no_grad, relu, softmax_axis,
                          transpose, tsum)


def rand(rng, *shape):
    return rng.normal(0.0, 1.0, shape)


class TestTensorBasics:
    def test_non_finite_rejected(self):
        with pytest.raises(NumericsError):
            Tensor([1.0, np.nan])
        with pytest.raises(NumericsError):
            Tensor([np.inf])

    def test_int_input_promoted_to_float64(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.dtype == np.float64

    def test_mixed_dtype_rejected(self):
        a = Tensor(np.ones(3, dtype=np.float32))
        b = Tensor(np.ones(3, dtype=np.float64))
        with pytest.raises(TypeError):
            a + b


class TestMatmul:
    def test_identity(self):
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(Tensor(np.eye(2)), m)
        assert np.array_equal(out.data, m.data)

    def test_zero(self):
        z = matmul(Tensor(np.zeros((2, 2))), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        assert np.array_equal(z.data, np.zeros((2, 2)))

    def test_2x2_against_loop_oracle(self):
        a, b = [[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]]
        out = matmul(Tensor(a), Tensor(b))
        assert np.array_equal(out.data, oracle_matmul(a, b))
        assert np.array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_associativity_on_random_triples(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a, b, c = (Tensor(rand(rng, 4, 4)) for _ in range(3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.allclose(left.data, right.data, atol=1e-10, rtol=0)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(3)
        a = rand(rng, 4, 3, 2)
        b = rand(rng, 2, 5)
        out = matmul(Tensor(a), Tensor(b))
        for i in range(4):
            assert np.allclose(out.data[i], oracle_matmul(a[i], b), atol=1e-12)


class TestSoftmax:
    def test_constant_gives_uniform(self):
        out = softmax_axis(Tensor([[3.3, 3.3, 3.3]]), axis=1)
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_closed_form(self):
        out = softmax_axis(Tensor([0.0, np.log(3.0)]), axis=0)
        assert np.allclose(out.data, [0.25, 0.75], atol=1e-15)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
           st.floats(-30, 30))
    def test_shift_invariance_and_sum(self, values, shift):
        x = np.array(values)
        s1 = softmax_axis(Tensor(x), axis=0).data
        s2 = softmax_axis(Tensor(x + shift), axis=0).data
        assert np.allclose(s1, s2, atol=1e-12)
        assert abs(s1.sum() - 1.0) < 1e-12

    def test_sum_along_chosen_axis(self):
        rng = np.random.default_rng(0)
        x = Tensor(rand(rng, 3, 5, 4))
        for axis in range(3):
            s = softmax_axis(x, axis=axis).data
            assert np.allclose(s.sum(axis=axis), 1.0, atol=1e-12)
            assert (s > 0).all()

    def test_f32_sum_tolerance(self):
        rng = np.random.default_rng(1)
        x = Tensor(rand(rng, 6, 7).astype(np.float32))
        s = softmax_axis(x, axis=0).data
        assert np.allclose(s.sum(axis=0), 1.0, atol=1e-6)


class TestGrad:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        g = grad(tsum(x), [x])
        assert np.array_equal(g[x].data, np.ones((2, 3)))

    def test_half_square_gradient_is_x(self):
        rng = np.random.default_rng(2)
        x = Tensor(rand(rng, 3, 4), requires_grad=True)
        loss = (x * x).sum() * 0.5
        g = grad(loss, [x])
        assert np.allclose(g[x].data, x.data, atol=1e-15)

    def test_unused_parameter_is_an_error(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([1.0], requires_grad=True)
        loss = (x * x).sum()
        with pytest.raises(ValueError):
            grad(loss, [x, y])
        g = grad((x * x).sum(), [x, y], allow_unused=True)
        assert np.array_equal(g[y].data, [0.0])

    def test_grad_shapes_match_params(self):
        rng = np.random.default_rng(3)
        a = Tensor(rand(rng, 3, 2), requires_grad=True)
        b = Tensor(rand(rng, 2, 4), requires_grad=True)
        g = grad((matmul(a, b) * matmul(a, b)).sum(), [a, b])
        assert g[a].shape == a.shape and g[b].shape == b.shape

    def test_no_grad_blocks_recording(self):
        x = Tensor([2.0], requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        with pytest.raises(ValueError):
            grad(y, [x])


class TestFdCheck:
    def test_linear_function_is_exact(self):
        rng = np.random.default_rng(0)
        w = Tensor(rand(rng, 5), requires_grad=True)
        c = Tensor(rand(rng, 5))
        err = fd_check(lambda ps: (ps[0] * c).sum(), [w], rng=0)
        assert err < 1e-10

    def test_quadratic_function(self):
        rng = np.random.default_rng(1)
        w = Tensor(rand(rng, 4, 4), requires_grad=True)
        err = fd_check(lambda ps: (ps[0] * ps[0]).sum(), [w], rng=1)
        assert err < 1e-9

    def test_composed_graph(self):
        rng = np.random.default_rng(2)
        a = Tensor(rand(rng, 3, 4), requires_grad=True)
        b = Tensor(rand(rng, 4, 2), requires_grad=True)

        def f(ps):
            h = relu(matmul(ps[0], ps[1]))
            return (softmax_axis(h, axis=1) * h).sum()

        assert fd_check(f, [a, b], rng=2) < 1e-6


class TestShapeOps:
    def test_transpose_roundtrip_gradient(self):
        rng = np.random.default_rng(4)
        x = Tensor(rand(rng, 2, 3, 4), requires_grad=True)
        loss = (transpose(x, (2, 0, 1)) * transpose(x, (2, 0, 1))).sum()
        g = grad(loss, [x])
        assert np.allclose(g[x].data, 2 * x.data, atol=1e-14)

    def test_concat_and_narrow_invert(self):
        rng = np.random.default_rng(5)
        a = Tensor(rand(rng, 2, 3))
        b = Tensor(rand(rng, 2, 5))
        joined = concat([a, b], axis=1)
        assert np.array_equal(narrow(joined, 1, 0, 3).data, a.data)
        assert np.array_equal(narrow(joined, 1, 3, 5).data, b.data)

    def test_narrow_bounds(self):
        with pytest.raises(ShapeError):
            narrow(Tensor(np.ones((2, 3))), 1, 2, 5)
