import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtensemble import tensor as tc
from mtensemble.errors import DimensionError, ParameterError, UsageError
from mtensemble.layers import Dense
from mtensemble.tensor import LossKind, Tensor


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(tc.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)

    def test_row_times_column(self):
        out = tc.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_zero_annihilates(self, rng):
        out = tc.matmul(Tensor(np.zeros((2, 3))), Tensor(rng.normal(size=(3, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            tc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


class TestActivations:
    def test_sigmoid_zero(self):
        assert tc.activation(Tensor([0.0]), "sigmoid").data[0] == 0.5

    def test_softmax_symmetric(self):
        out = tc.activation(Tensor([[0.0, 0.0, 0.0]]), "softmax-rows").data
        np.testing.assert_allclose(out, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_relu(self):
        assert tc.activation(Tensor([-2.0, 3.0]), "relu").data.tolist() == [0.0, 3.0]

    def test_softmax_rows_requires_matrix(self):
        with pytest.raises(DimensionError):
            tc.activation(Tensor([1.0, 2.0]), "softmax-rows")

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            tc.activation(Tensor([1.0]), "swish")

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
    def test_softmax_rows_sum_to_one(self, x):
        out = tc.softmax(Tensor(x)).data
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


class TestDropout:
    def test_inference_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 5)))
        assert tc.dropout(x, 0.25, False, rng) is x

    def test_zero_rate_is_identity(self, rng):
        x = Tensor(rng.normal(size=(4, 5)))
        np.testing.assert_array_equal(tc.dropout(x, 0.0, True, rng).data, x.data)

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_rate_out_of_range(self, rate, rng):
        with pytest.raises(ParameterError):
            tc.dropout(Tensor([1.0]), rate, True, rng)

    def test_expectation_preserved(self):
        out = tc.dropout(Tensor(np.ones(100_000)), 0.25, True, np.random.default_rng(0)).data
        assert abs(out.mean() - 1.0) <= 0.02
        assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}

    def test_gradient_masks_like_forward(self):
        x = Tensor(np.ones(1000), requires_grad=True)
        out = tc.dropout(x, 0.5, True, np.random.default_rng(3))
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, out.data)


class TestLosses:
    def test_mse_of_equal_is_zero(self, rng):
        x = rng.normal(size=(3, 1))
        assert tc.loss(Tensor(x), x, LossKind.MEAN_SQUARED_ERROR).item() == 0.0

    def test_ce_of_perfect_prediction(self):
        assert tc.loss(Tensor([[1.0, 0.0]]), [[1.0, 0.0]], LossKind.CATEGORICAL_CROSS_ENTROPY).item() <= 1e-10

    def test_mse_hand_value(self):
        assert tc.loss(Tensor([0.0, 0.0]), [1.0, 1.0], LossKind.MEAN_SQUARED_ERROR).item() == 1.0

    def test_ce_hand_value(self):
        value = tc.cross_entropy(Tensor([[0.25, 0.75]]), [[0.0, 1.0]]).item()
        assert value == pytest.approx(-math.log(0.75 + 1e-12), abs=1e-15)

    @pytest.mark.parametrize("kind", list(LossKind))
    def test_shape_mismatch(self, kind):
        with pytest.raises(DimensionError):
            tc.loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3)), kind)


def _adam_reference(grads, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam on a scalar, written out longhand."""
    w, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(w)
    return out


class TestAdam:
    def _run(self, grads):
        p = tc.parameter(np.zeros(1))
        state = tc.AdamState.for_param(p)
        values = []
        for g in grads:
            p.grad = np.array([g])
            tc.adam_step(p, state)
            values.append(float(p.data[0]))
        return values, state

    def test_first_step(self):
        (w1,), _ = self._run([1.0])
        assert abs(w1 + 0.001) < 1e-6

    def test_two_steps(self):
        (w1, w2), state = self._run([1.0, 1.0])
        assert abs(w2 + 0.002) < 1e-5
        assert state.t == 2
        np.testing.assert_allclose([w1, w2], _adam_reference([1.0, 1.0]), rtol=0, atol=1e-15)

    def test_zero_gradient_is_noop(self):
        (w1,), _ = self._run([0.0])
        assert w1 == 0.0

    def test_missing_gradient(self):
        p = tc.parameter(np.zeros(2))
        with pytest.raises(UsageError):
            tc.adam_step(p, tc.AdamState.for_param(p))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    def test_matches_reference(self, grads):
        values, _ = self._run(grads)
        np.testing.assert_allclose(values, _adam_reference(grads), rtol=1e-12, atol=1e-15)


class TestGradientCheck:
    def test_linear_map_is_exact(self, rng):
        assert tc.gradient_check(lambda x: x * 3.0, rng.normal(size=(4, 3))) <= 1e-10

    def test_dense_relu(self):
        rng = np.random.default_rng(42)
        layer = Dense(8, 4, "relu", rng)
        x = rng.normal(size=(5, 8))
        err = tc.gradient_check(layer, x, layer.named_parameters().values())
        assert err < 1e-4

    @pytest.mark.parametrize("kind", ["sigmoid", "tanh", "softmax"])
    def test_activations(self, kind, rng):
        assert tc.gradient_check(lambda x: tc.activation(x, kind) * Tensor(np.arange(12.0).reshape(3, 4)),
                                 rng.normal(size=(3, 4))) < 1e-4

    def test_losses(self, rng):
        gold = np.eye(3)[[0, 2, 1, 1]]
        ce = lambda x: tc.cross_entropy(tc.softmax(x), gold)
        assert tc.gradient_check(ce, rng.normal(size=(4, 3))) < 1e-4
        mse = lambda x: tc.mse(tc.sigmoid(x), rng.uniform(size=(4, 1)) * 0 + 0.3)
        assert tc.gradient_check(mse, rng.normal(size=(4, 1))) < 1e-4

    def test_structural_ops(self, rng):
        w = Tensor(rng.normal(size=(2, 5)))
        op = lambda x: tc.concat([x[0:1] * x[1:2], x.reshape(5, 2).sum(axis=1).reshape(1, 5)], axis=0) * w
        assert tc.gradient_check(op, rng.normal(size=(2, 5))) < 1e-4

    def test_detects_wrong_gradient(self, rng):
        def bad(x):
            return Tensor._op(x.data ** 2, (x,), lambda g: (g * x.data,))
        assert tc.gradient_check(bad, rng.uniform(1, 2, size=5)) > 0.1

    def test_kink_is_detected_and_skipped(self):
        x = np.array([0.5e-4, 1.0, -1.0])
        assert tc.gradient_check(tc.relu, x) > 0.1
        detail = tc.gradient_check_detail(tc.relu, x, skip_kinks=True)
        assert (detail.n_checked, detail.n_skipped) == (2, 1)
        assert detail.max_error <= 1e-10

    def test_smooth_net_skips_nothing(self):
        rng = np.random.default_rng(2)
        layer = Dense(6, 5, "tanh", rng)
        detail = tc.gradient_check_detail(layer, rng.normal(size=(3, 6)), layer.named_parameters().values(),
                                          skip_kinks=True)
        assert detail.n_skipped == 0 and detail.n_checked == 18 + 30 + 5

    def test_sampled_coordinates(self):
        rng = np.random.default_rng(1)
        layer = Dense(40, 30, "tanh", rng)
        err = tc.gradient_check(layer, rng.normal(size=(3, 40)), layer.named_parameters().values(), sample=25)
        assert err < 1e-4


def test_backward_accumulates_shared_subexpressions():
    x = Tensor([2.0], requires_grad=True)
    y = x * x + x
    y.sum().backward()
    assert x.grad.tolist() == [5.0]


def test_backward_needs_scalar_seed():
    with pytest.raises(UsageError):
        Tensor(np.ones(3), requires_grad=True).backward()
