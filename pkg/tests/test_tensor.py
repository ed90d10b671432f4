import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tprcap import tensor as T
from tprcap.tensor import Tensor

from conftest import gradcheck


def finite_floats(lo=-50, hi=50):
    return st.floats(lo, hi, allow_nan=False, allow_infinity=False)


class TestMatmul:
    def test_identity(self, rng):
        X = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(X)).data, X)

    def test_hand_values(self):
        out = T.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]]))
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_shape_error_names_both(self):
        with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_of_sum(self, rng):
        a, b = rng.uniform(-1, 1, (5, 4)), rng.uniform(-1, 1, (4, 3))
        pa = T.parameter(a)
        T.backward(T.total(T.matmul(pa, Tensor(b))))
        numeric = T.finite_diff(lambda: T.matmul(pa, Tensor(b)).data.sum(), [pa])[pa]
        assert T.relative_error(pa.grad, numeric).max() < 1e-6

    def test_gradcheck_both(self, rng):
        gradcheck(T.matmul, [rng.uniform(-1, 1, (5, 4)), rng.uniform(-1, 1, (4, 3))], rng)

    def test_linear_gradcheck(self, rng):
        gradcheck(T.linear, [rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (5, 4))], rng)


class TestOuter:
    def test_unit_vectors(self):
        e1, e2 = np.eye(3)[0], np.eye(3)[1]
        expected = np.zeros((3, 3))
        expected[0, 1] = 1
        np.testing.assert_array_equal(T.outer(Tensor(e1), Tensor(e2)).data, expected)

    def test_unbind_identity(self, rng):
        a = rng.normal(size=4)
        b = rng.normal(size=6)
        b /= np.linalg.norm(b)
        M = T.outer(Tensor(a), Tensor(b))
        np.testing.assert_allclose(T.matvec(M, Tensor(b)).data, a, atol=1e-14)

    def test_rank_error(self):
        with pytest.raises(T.RankError):
            T.outer(Tensor(np.zeros((2, 2, 2))), Tensor(np.zeros(2)))

    @pytest.mark.parametrize("batched_b", [False, True])
    def test_gradcheck(self, rng, batched_b):
        b = rng.uniform(-1, 1, (3, 5) if batched_b else (5,))
        gradcheck(T.outer, [rng.uniform(-1, 1, (3, 4)), b], rng)
        gradcheck(T.outer, [rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 5)], rng)


class TestElementwise:
    def test_mul_ones_zeros(self, rng):
        x = rng.normal(size=(3, 2))
        np.testing.assert_array_equal(T.elementwise(Tensor(x), Tensor(np.ones((3, 2))), "mul").data, x)
        np.testing.assert_array_equal(T.elementwise(Tensor(x), Tensor(np.zeros((3, 2))), "mul").data, 0)

    def test_shape_mismatch(self):
        with pytest.raises(T.DimensionError):
            T.elementwise(Tensor(np.zeros(3)), Tensor(np.zeros(4)), "add")

    @pytest.mark.parametrize("op", ["mul", "add", "sub"])
    @pytest.mark.parametrize("shape", [(4,), (2, 3), (2, 2, 3)])
    def test_gradcheck(self, rng, op, shape):
        gradcheck(lambda a, b: T.elementwise(a, b, op), [rng.uniform(-1, 1, shape), rng.uniform(-1, 1, shape)], rng)

    def test_add_bias_gradcheck(self, rng):
        gradcheck(T.add_bias, [rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, 3)], rng)


class TestActivations:
    def test_sigmoid_zero(self):
        assert T.activation(Tensor([0.0]), "sigmoid").data[0] == 0.5

    def test_softmax_constant(self):
        out = T.softmax(Tensor(np.full(7, 3.3))).data
        np.testing.assert_allclose(out, 1 / 7, rtol=0, atol=1e-15)

    def test_extreme_inputs_stay_finite(self):
        x = Tensor([-1e4, -50.0, 0.0, 50.0, 1e4])
        for kind in ("sigmoid", "tanh", "softmax"):
            assert np.isfinite(T.activation(x, kind).data).all()

    @pytest.mark.parametrize("kind", ["sigmoid", "tanh", "softmax"])
    def test_gradcheck(self, rng, kind):
        gradcheck(lambda x: T.activation(x, kind), [rng.uniform(-1, 1, (3, 5))], rng)

    def test_log_softmax_gradcheck(self, rng):
        gradcheck(T.log_softmax, [rng.uniform(-1, 1, (3, 5))], rng)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 9)), elements=finite_floats(-300, 300)))
    def test_softmax_rows_sum_to_one(self, x):
        out = T.softmax(Tensor(x)).data
        assert (out > 0).all()
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(1, 20), elements=finite_floats()))
    def test_ranges(self, x):
        s = T.sigmoid(Tensor(x)).data
        t = T.tanh(Tensor(x)).data
        assert ((s >= 0) & (s <= 1)).all() and ((t >= -1) & (t <= 1)).all()


class TestContract3:
    def test_delta_slice(self):
        C = np.zeros((3, 3, 4))
        C[:, :, 0] = 1
        out = T.contract3(Tensor(C), Tensor([2.5, 0, 0, 0])).data
        np.testing.assert_array_equal(out, np.full((3, 3), 2.5))

    def test_zero_q(self, rng):
        out = T.contract3(Tensor(rng.normal(size=(3, 3, 4))), Tensor(np.zeros(4))).data
        np.testing.assert_array_equal(out, 0)

    def test_extent_mismatch(self):
        with pytest.raises(T.DimensionError):
            T.contract3(Tensor(np.zeros((2, 2, 3))), Tensor(np.zeros(4)))

    def test_gradcheck(self, rng):
        gradcheck(T.contract3, [rng.uniform(-1, 1, (3, 3, 4)), rng.uniform(-1, 1, 4)], rng)
        gradcheck(T.contract3, [rng.uniform(-1, 1, (2, 3, 4)), rng.uniform(-1, 1, (5, 4))], rng)


class TestVec:
    def test_column_stacking(self):
        np.testing.assert_array_equal(T.vec(Tensor([[1, 2], [3, 4]])).data, [1, 3, 2, 4])

    def test_rank_error(self):
        with pytest.raises(T.RankError):
            T.vec(Tensor(np.zeros(4)))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite_floats()))
    def test_round_trips_bit_exact(self, M):
        back = T.unvec(T.vec(Tensor(M)), *M.shape).data
        np.testing.assert_array_equal(back, M)
        np.testing.assert_array_equal(T.transpose(T.transpose(Tensor(M))).data, M)

    def test_batched_matches_single(self, rng):
        Ms = rng.normal(size=(3, 4, 5))
        out = T.vec(Tensor(Ms)).data
        for b in range(3):
            np.testing.assert_array_equal(out[b], T.vec(Tensor(Ms[b])).data)

    def test_gradcheck(self, rng):
        gradcheck(T.vec, [rng.uniform(-1, 1, (3, 4))], rng)
        gradcheck(T.vec, [rng.uniform(-1, 1, (2, 3, 4))], rng)


class TestGathers:
    def test_take_columns_matches_one_hot(self, rng):
        W = rng.normal(size=(4, 6))
        ids = [5, 0, 5, 2]
        onehot = np.eye(6)[ids]
        np.testing.assert_array_equal(T.take_columns(Tensor(W), ids).data, (W @ onehot.T).T)

    def test_take_columns_gradcheck_with_repeats(self, rng):
        gradcheck(lambda W: T.take_columns(W, [1, 3, 1]), [rng.uniform(-1, 1, (4, 5))], rng)

    def test_pick_gradcheck(self, rng):
        gradcheck(lambda x: T.pick(x, [0, 4, 2]), [rng.uniform(-1, 1, (3, 5))], rng)

    def test_matvec_gradcheck(self, rng):
        gradcheck(T.matvec, [rng.uniform(-1, 1, (2, 3, 4)), rng.uniform(-1, 1, (2, 4))], rng)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = T.parameter(rng.normal(size=(3, 4)))
        T.backward(T.total(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_half_square_norm_gives_x(self, rng):
        data = rng.normal(size=5)
        x = T.parameter(data)
        T.backward(T.scale(T.total(T.mul(x, x)), 0.5))
        np.testing.assert_allclose(x.grad, data, rtol=1e-15)

    def test_non_scalar_root(self):
        with pytest.raises(T.GraphError):
            T.backward(T.tanh(T.parameter(np.zeros(3))))

    def test_repeated_backward_is_error(self):
        loss = T.total(T.parameter(np.ones(2)))
        T.backward(loss)
        with pytest.raises(T.GraphError):
            T.backward(loss)

    def test_shared_use_accumulates(self):
        x = T.parameter([2.0])
        T.backward(T.total(T.add(T.mul(x, x), x)))
        assert x.grad[0] == 5.0

    @pytest.mark.parametrize("k", [1, 5, 40])
    def test_chain_visits_each_node_once(self, k):
        x = T.parameter([0.3, -0.2])
        y = x
        for _ in range(k):
            y = T.tanh(y)
        T.backward(T.total(y))
        # k activations, the leaf and the reduction
        assert T.backward.last_visit_count == k + 2

    def test_no_grad_builds_no_graph(self):
        x = T.parameter([1.0])
        with T.no_grad():
            y = T.tanh(x)
        assert not y.requires_grad and y._parents == ()


class TestFiniteDiff:
    def test_quadratic(self):
        p = T.parameter([3.0])
        est = T.finite_diff(lambda: p.data[0] ** 2, [p], 1e-5)[p]
        assert abs(est[0] - 6.0) < 1e-8

    def test_linear(self):
        p = T.parameter([1.7])
        est = T.finite_diff(lambda: 5 * p.data[0], [p], 1e-5)[p]
        assert est[0] == pytest.approx(5.0, abs=1e-9)

    def test_restores_parameters(self, rng):
        data = rng.normal(size=(3, 3))
        p = T.parameter(data)
        T.finite_diff(lambda: np.tanh(p.data).sum(), [p])
        np.testing.assert_array_equal(p.data, data)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            T.finite_diff(lambda: 0.0, [], 0.0)
