"""Tensor-engine tests: examples, finite-difference oracles, properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import kgreport.autodiff as ad
from kgreport.autodiff import (
    ShapeError, Tape, Tensor, add, add_bias, backward, concat, cross_entropy,
    gather_rows, gelu, grad_check, index, layer_norm, matmul, mean_rows, mul,
    scale_by, sigmoid, softmax, sum_all,
)


def tensor(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


def matmul_oracle(a, b):
    """Brute-force triple loop product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


class TestMatmul:
    def test_identity(self):
        x = tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = tensor(np.eye(2))
        assert np.array_equal(matmul(eye, x).data, x.data)

    def test_against_triple_loop(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        expected = matmul_oracle(a, b)
        assert np.array_equal(expected, np.array([[19.0, 22.0], [43.0, 50.0]]))
        assert np.allclose(matmul(tensor(a), tensor(b)).data, expected, atol=0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(tensor(np.zeros((2, 3))), tensor(np.zeros((2, 3))))


class TestSoftmax:
    def test_uniform(self):
        out = softmax(tensor([0.0, 0.0, 0.0]), axis=0)
        assert np.allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_two_values(self):
        out = softmax(tensor([1.0, 2.0]), axis=0)
        # direct exp/sum evaluation: exp(1)/(exp(1)+exp(2)) = 1/(1+e)
        assert abs(out.data[0] - 0.2689414213699951) < 1e-5
        assert abs(out.data[1] - 0.7310585786300049) < 1e-5

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=6),
           st.floats(-100, 100))
    def test_shift_invariance(self, xs, c):
        x = tensor(xs)
        shifted = tensor([v + c for v in xs])
        assert np.allclose(softmax(x, axis=0).data, softmax(shifted, axis=0).data,
                           atol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.floats(-50, 50), min_size=3, max_size=3),
                    min_size=1, max_size=5))
    def test_rows_sum_to_one(self, rows):
        out = softmax(tensor(rows), axis=1)
        assert np.all(np.abs(out.data.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(out.data >= 0)

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            softmax(tensor([[1.0, 2.0]]), axis=2)


class TestLayerNorm:
    def test_constant_row_is_zero(self):
        x = tensor([[5.0, 5.0, 5.0]])
        out = layer_norm(x, tensor([1.0] * 3), tensor([0.0] * 3))
        assert np.allclose(out.data, 0.0, atol=1e-6)

    def test_three_values(self):
        # mean/variance oracle: mu=2, var=2/3, (x-mu)/sqrt(var+eps)
        x = np.array([1.0, 2.0, 3.0])
        inv = 1.0 / math.sqrt(2.0 / 3.0 + 1e-5)
        expected = (x - 2.0) * inv
        out = layer_norm(tensor(x), tensor([1.0] * 3), tensor([0.0] * 3), eps=1e-5)
        assert np.allclose(out.data, expected, atol=1e-12)
        assert abs(out.data[0] + 1.22474) < 1e-4
        assert abs(out.data[2] - 1.22474) < 1e-4

    def test_zero_gamma_collapses_to_beta(self):
        rng = np.random.default_rng(0)
        x = tensor(rng.normal(size=(4, 5)))
        beta = tensor(rng.normal(size=5))
        out = layer_norm(x, tensor(np.zeros(5)), beta)
        assert np.allclose(out.data, np.broadcast_to(beta.data, (4, 5)))

    def test_zero_length_axis_rejected(self):
        with pytest.raises(ShapeError):
            layer_norm(tensor(np.zeros((2, 0))), tensor(np.zeros(0)), tensor(np.zeros(0)))


class TestGelu:
    def test_zero(self):
        assert gelu(tensor([0.0])).data[0] == 0.0

    def test_one(self):
        # erf-series oracle: 0.5 * (1 + erf(1/sqrt(2))) = Phi(1)
        assert abs(gelu(tensor([1.0])).data[0] - 0.8413447460685429) < 1e-4

    def test_asymptote(self):
        assert abs(gelu(tensor([10.0])).data[0] - 10.0) < 1e-6


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(tensor([0.0])).data[0] == 0.5

    def test_one(self):
        assert abs(sigmoid(tensor([1.0])).data[0] - 0.7310585786300049) < 1e-5

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-700, 700))
    def test_symmetry_and_open_interval(self, v):
        s = sigmoid(tensor([v])).data[0]
        s_neg = sigmoid(tensor([-v])).data[0]
        assert abs(s_neg - (1.0 - s)) < 1e-12
        assert 0.0 < s < 1.0


class TestConcat:
    def test_with_empty(self):
        x = tensor([1.0, 2.0])
        empty = tensor(np.zeros((0,)))
        assert np.array_equal(concat(x, empty, axis=0).data, x.data)

    def test_one_dim(self):
        out = concat(tensor([1.0, 2.0]), tensor([3.0]), axis=0)
        assert np.array_equal(out.data, [1.0, 2.0, 3.0])

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError):
            concat(tensor(np.zeros((2, 3))), tensor(np.zeros((2, 4))), axis=0)

    def test_gradient_routes_to_slices(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 1)))

        def f(a_, b_):
            joined = concat(a_, b_, axis=0)
            return sum_all(mul(matmul(joined, w), matmul(joined, w)))

        assert grad_check(f, [a, b]) < 1e-6


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = tensor(np.zeros((3, 8)))
        loss = cross_entropy(logits, [1, 2, 3], [True, True, True])
        assert abs(loss.item() - math.log(8)) < 1e-12

    def test_confident(self):
        row = np.zeros((1, 5))
        row[0, 2] = 30.0
        loss = cross_entropy(tensor(row), [2], [True])
        assert loss.item() < 1e-9

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(3, 5))
        targets = [4, 0, 2]
        # direct softmax-then-log oracle
        expected = 0.0
        for i, t in enumerate(targets):
            p = np.exp(logits[i]) / np.exp(logits[i]).sum()
            expected += -math.log(p[t])
        expected /= 3
        loss = cross_entropy(tensor(logits), targets, [True] * 3)
        assert abs(loss.item() - expected) < 1e-9

    def test_sum_reduction(self):
        rng = np.random.default_rng(8)
        logits = tensor(rng.normal(size=(2, 4)))
        mean = cross_entropy(logits, [1, 2], [True, True], reduction="mean")
        total = cross_entropy(logits, [1, 2], [True, True], reduction="sum")
        assert abs(total.item() - 2 * mean.item()) < 1e-12

    def test_all_masked_rejected(self):
        with pytest.raises(ValueError):
            cross_entropy(tensor(np.zeros((2, 4))), [0, 0], [False, False])

    def test_out_of_range_target_rejected(self):
        with pytest.raises(IndexError):
            cross_entropy(tensor(np.zeros((1, 4))), [4], [True])

    def test_masked_rows_ignored(self):
        rng = np.random.default_rng(9)
        logits = rng.normal(size=(3, 5))
        full = cross_entropy(tensor(logits[:2]), [1, 2], [True, True])
        masked = cross_entropy(tensor(logits), [1, 2, 0], [True, True, False])
        assert abs(full.item() - masked.item()) < 1e-12


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        with Tape():
            loss = sum_all(mul(x, x))
            backward(loss)
        assert np.allclose(x.grad, 2 * x.data, atol=1e-14)

    def test_cross_entropy_grad_is_softmax_minus_onehot(self):
        rng = np.random.default_rng(3)
        logits = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        targets = [0, 3, 1]
        with Tape():
            loss = cross_entropy(logits, targets, [True] * 3)
            backward(loss)
        probs = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
        onehot = np.zeros((3, 5))
        onehot[np.arange(3), targets] = 1.0
        assert np.allclose(logits.grad, (probs - onehot) / 3, atol=1e-12)
        # and the same thing via finite differences
        err = grad_check(lambda t: cross_entropy(t, targets, [True] * 3), [logits])
        assert err < 1e-6

    def test_no_grad_without_flag(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=False)
        with Tape():
            loss = sum_all(mul(x, x))
            backward(loss)
        assert x.grad is None

    def test_backward_outside_tape_rejected(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        with Tape():
            loss = sum_all(mul(x, x))
        with pytest.raises(RuntimeError):
            backward(loss)

    def test_non_scalar_root_rejected(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape():
            y = mul(x, x)
            with pytest.raises(ShapeError):
                backward(y)

    def test_fanout_sums_both_paths(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3)))

        def f(x_):
            a = matmul(x_, w)
            b = mul(x_, x_)
            joined = add(a, b)
            return sum_all(mul(joined, joined))

        assert grad_check(f, [x]) < 1e-6

    def test_repeated_backward_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape():
            loss = sum_all(mul(x, x))
            backward(loss)
            backward(loss)
        assert np.allclose(x.grad, 4 * x.data)


class TestGradCheckHarness:
    def test_quadratic_form(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(4,)).reshape(1, 4), requires_grad=True)
        q = Tensor(rng.normal(size=(4, 4)))
        err = grad_check(lambda t: sum_all(matmul(matmul(t, q), t.T)), [x])
        assert err < 1e-8

    def test_detects_corrupted_gradient(self):
        def bad_square(x):
            out = Tensor(x.data ** 2)
            return ad._record("bad_square", (x,), out,
                              lambda g: (g * (2 * x.data + 0.1),))

        x = Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True)
        err = grad_check(lambda t: sum_all(bad_square(t)), [x])
        assert err > 1e-2


FD_TOL = 1e-4


class TestPerOpGradients:
    """Every op's analytic gradient vs central differences on random inputs."""

    def _leaves(self, seed, *shapes):
        rng = np.random.default_rng(seed)
        return [Tensor(rng.uniform(-2, 2, size=s), requires_grad=True) for s in shapes]

    def test_add_sub_mul_neg_scale(self):
        a, b = self._leaves(10, (3, 4), (3, 4))
        assert grad_check(lambda x, y: sum_all(mul(add(x, y), ad.sub(x, y))), [a, b]) < FD_TOL
        assert grad_check(lambda x, y: sum_all(mul(ad.neg(x), ad.scale(y, 1.7))), [a, b]) < FD_TOL

    def test_matmul_transpose(self):
        a, b = self._leaves(11, (3, 4), (4, 2))
        assert grad_check(lambda x, y: sum_all(mul(matmul(x, y), matmul(x, y))), [a, b]) < FD_TOL
        assert grad_check(lambda x: sum_all(mul(x.T, x.T)), [a]) < FD_TOL

    def test_softmax_axes(self):
        (x,) = self._leaves(12, (3, 5))
        w = Tensor(np.random.default_rng(0).normal(size=(3, 5)))
        for axis in (0, 1):
            assert grad_check(lambda t: sum_all(mul(softmax(t, axis=axis), w)), [x]) < FD_TOL

    def test_layer_norm(self):
        x, g, b = self._leaves(13, (4, 6), (6,), (6,))
        w = Tensor(np.random.default_rng(1).normal(size=(4, 6)))
        err = grad_check(lambda t, gg, bb: sum_all(mul(layer_norm(t, gg, bb), w)), [x, g, b])
        assert err < FD_TOL

    def test_gelu_sigmoid(self):
        (x,) = self._leaves(14, (3, 4))
        assert grad_check(lambda t: sum_all(gelu(t)), [x]) < FD_TOL
        assert grad_check(lambda t: sum_all(sigmoid(t)), [x]) < FD_TOL

    def test_concat_axes(self):
        a, b = self._leaves(15, (2, 3), (4, 3))
        w = Tensor(np.random.default_rng(2).normal(size=(6, 3)))
        assert grad_check(lambda x, y: sum_all(mul(concat(x, y, axis=0), w)), [a, b]) < FD_TOL
        c, d = self._leaves(16, (2, 3), (2, 5))
        w2 = Tensor(np.random.default_rng(3).normal(size=(2, 8)))
        assert grad_check(lambda x, y: sum_all(mul(concat(x, y, axis=1), w2)), [c, d]) < FD_TOL

    def test_gather_mean_index_scale_by_bias(self):
        table, = self._leaves(17, (5, 3))
        assert grad_check(
            lambda t: sum_all(mul(gather_rows(t, [0, 2, 2, 4]), gather_rows(t, [1, 1, 3, 0]))),
            [table]) < FD_TOL
        x, = self._leaves(18, (4, 3))
        assert grad_check(lambda t: sum_all(mul(mean_rows(t), mean_rows(t))), [x]) < FD_TOL
        assert grad_check(lambda t: sum_all(scale_by(t, index(t, 1, 2))), [x]) < FD_TOL
        m, bias = self._leaves(19, (4, 3), (3,))
        assert grad_check(lambda t, bb: sum_all(mul(add_bias(t, bb), add_bias(t, bb))),
                          [m, bias]) < FD_TOL


class TestDeterminism:
    def test_ops_bit_identical(self):
        rng = np.random.default_rng(20)
        x = tensor(rng.normal(size=(4, 6)))
        g = tensor(np.abs(rng.normal(size=6)) + 0.5)
        b = tensor(rng.normal(size=6))
        for op in (lambda: softmax(x, axis=1), lambda: gelu(x), lambda: sigmoid(x),
                   lambda: layer_norm(x, g, b)):
            first, second = op(), op()
            assert np.array_equal(first.data, second.data)

    def test_nested_tape_rejected(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass


class TestTensorInvariants:
    def test_values_flat_view(self):
        t = tensor([[1.0, 2.0], [3.0, 4.0]])
        assert math.prod(t.shape) == len(t.values)
        assert list(t.values) == [1.0, 2.0, 3.0, 4.0]

    def test_finite_after_ops(self):
        rng = np.random.default_rng(21)
        x = tensor(rng.uniform(-2, 2, size=(5, 5)))
        outs = [softmax(x, axis=1), gelu(x), sigmoid(x),
                layer_norm(x, tensor(np.ones(5)), tensor(np.zeros(5)))]
        for out in outs:
            assert np.all(np.isfinite(out.data))
