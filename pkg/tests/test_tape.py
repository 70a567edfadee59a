"""Engine tests: eager values, gradients as replayable nodes, replay fidelity."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wganlab import tape as T
from wganlab.tape import NodeRef, NonFiniteError, Tape, eval_forward, grad


def small_arrays(shape=(2, 3)):
    return st.lists(
        st.floats(min_value=-10, max_value=10, allow_nan=False),
        min_size=int(np.prod(shape)),
        max_size=int(np.prod(shape)),
    ).map(lambda v: np.array(v).reshape(shape))


class TestForward:
    def test_leaf_and_const_hold_values(self):
        t = Tape()
        x = t.leaf("x", [1.0, 2.0])
        c = t.const([[3.0]])
        assert np.array_equal(x.value, [1.0, 2.0])
        assert c.value.shape == (1, 1)

    def test_operator_overloads_match_numpy(self):
        t = Tape()
        a = t.leaf("a", [[1.0, 2.0], [3.0, 4.0]])
        b = t.leaf("b", [[5.0, 6.0], [7.0, 8.0]])
        av, bv = a.value, b.value
        assert np.array_equal((a + b).value, av + bv)
        assert np.array_equal((a - b).value, av - bv)
        assert np.array_equal((a * b).value, av * bv)
        assert np.allclose((a / b).value, av / bv)
        assert np.array_equal((a @ b).value, av @ bv)
        assert np.array_equal((-a).value, -av)
        assert np.array_equal((a * 2.0).value, 2 * av)
        assert np.array_equal((a + 1.5).value, av + 1.5)
        assert np.allclose((a ** 2).value, av ** 2)

    def test_duplicate_leaf_name_rejected(self):
        t = Tape()
        t.leaf("x", 1.0)
        with pytest.raises(ValueError, match="duplicate leaf"):
            t.leaf("x", 2.0)

    def test_operands_must_share_a_tape(self):
        t1, t2 = Tape(), Tape()
        a = t1.leaf("a", 1.0)
        b = t2.leaf("b", 2.0)
        with pytest.raises(ValueError, match="different tapes"):
            T.add(a, b)

    def test_same_shape_ops_reject_mismatch(self):
        t = Tape()
        a = t.leaf("a", np.zeros((2, 3)))
        b = t.leaf("b", np.zeros((3, 2)))
        with pytest.raises(ValueError, match="shape mismatch"):
            T.add(a, b)

    def test_nonfinite_result_raises_at_emission(self):
        t = Tape()
        x = t.leaf("x", [1000.0])
        with pytest.raises(NonFiniteError):
            T.exp(x)

    def test_nonfinite_input_rejected(self):
        t = Tape()
        with pytest.raises(NonFiniteError):
            t.leaf("x", [np.inf])

    def test_structural_ops(self):
        t = Tape()
        x = t.leaf("x", np.arange(6.0).reshape(2, 3))
        assert np.array_equal(T.transpose(x).value, x.value.T)
        assert np.array_equal(T.reshape(x, (6,)).value, np.arange(6.0))
        assert np.array_equal(T.slice_last(x, 1, 3).value, x.value[:, 1:3])
        assert np.array_equal(T.flip_last(x).value, x.value[:, ::-1])
        padded = T.pad_last(x, 1, 2).value
        assert padded.shape == (2, 6)
        assert np.array_equal(padded[:, 1:4], x.value)
        assert padded[:, 0].sum() == 0 and padded[:, 4:].sum() == 0

    def test_reductions_and_expansions(self):
        t = Tape()
        x = t.leaf("x", np.arange(6.0).reshape(2, 3))
        assert T.sum_all(x).value == 15.0
        assert np.array_equal(T.sum_last(x).value, [3.0, 12.0])
        assert np.array_equal(T.sum_first(x).value, [3.0, 5.0, 7.0])
        assert np.array_equal(T.mean_all(x).value, 2.5)
        y = t.leaf("y", [1.0, 2.0])
        assert np.array_equal(T.expand_last(y, 3).value, [[1, 1, 1], [2, 2, 2]])
        assert np.array_equal(T.expand_first(y, 3).value, [[1, 2], [1, 2], [1, 2]])

    def test_pointwise_values(self):
        t = Tape()
        x = t.leaf("x", [-2.0, -0.5, 0.5, 2.0])
        assert np.array_equal(T.relu(x).value, [0, 0, 0.5, 2])
        assert np.array_equal(T.leaky_relu(x, 0.1).value, [-0.2, -0.05, 0.5, 2])
        assert np.array_equal(T.step(x).value, [0, 0, 1, 1])
        assert np.array_equal(T.maxc(x, 0.0).value, [0, 0, 0.5, 2])
        assert np.allclose(T.sigmoid(x).value, 1 / (1 + np.exp(-x.value)))
        assert np.allclose(T.softplus(x).value, np.log1p(np.exp(x.value)))
        sm = T.softmax_last(t.leaf("y", [[1.0, 2.0, 3.0]])).value
        assert np.allclose(sm.sum(axis=-1), 1.0)
        assert np.all(np.diff(sm) > 0)

    def test_row_norm_value(self):
        t = Tape()
        x = t.leaf("x", [[3.0, 4.0], [0.0, 0.0]])
        v = T.row_norm(x, eps=1e-12).value
        assert v[0] == pytest.approx(5.0)
        assert v[1] == pytest.approx(1e-6, rel=1e-6)  # sqrt of the stabilizer

    def test_conv1d_value(self):
        t = Tape()
        x = t.leaf("x", np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        k = t.leaf("k", np.array([[[1.0, 0.0, -1.0]]]))
        assert np.array_equal(T.conv1d(x, k).value, [[[-2.0, -2.0]]])


class TestGrad:
    def test_square_gradient(self):
        t = Tape()
        x = t.leaf("x", 3.0)
        (g,) = grad(t, x * x, [x])
        assert g.value == 6.0

    def test_gradient_of_gradient_oracle(self):
        # h(x) = (d(x^2)/dx)^2 = 4x^2, so h'(1) = 8 and h'' = 8 everywhere.
        t = Tape()
        x = t.leaf("x", 1.0)
        (g,) = grad(t, x * x, [x])
        (h1,) = grad(t, g * g, [x])
        assert h1.value == pytest.approx(8.0)
        (h2,) = grad(t, h1, [x])
        assert h2.value == pytest.approx(8.0)

    def test_gradients_replay_at_new_points(self):
        t = Tape()
        x = t.leaf("x", 1.0)
        (g,) = grad(t, x * x, [x])
        (h1,) = grad(t, g * g, [x])
        assert eval_forward(t, {"x": np.asarray(3.0)}, h1) == pytest.approx(24.0)

    def test_unreachable_wrt_is_zero_and_stays_zero(self):
        t = Tape()
        a = t.leaf("a", [1.0, 2.0])
        b = t.leaf("b", [3.0, 4.0])
        (gb,) = grad(t, T.sum_all(a), [b])
        assert np.array_equal(gb.value, [0.0, 0.0])
        replay = eval_forward(t, {"a": np.array([9.0, 9.0]), "b": np.array([1.0, 1.0])}, gb)
        assert np.array_equal(replay, [0.0, 0.0])

    def test_output_must_be_scalar(self):
        t = Tape()
        x = t.leaf("x", [1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            grad(t, x, [x])

    def test_conv1d_input_gradient_oracle(self):
        # y = conv([1,2,3,4], [1,0,-1]) = [-2,-2]; d(sum y)/dx = [1,1,-1,-1].
        t = Tape()
        x = t.leaf("x", np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        k = t.const(np.array([[[1.0, 0.0, -1.0]]]))
        (gx,) = grad(t, T.sum_all(T.conv1d(x, k)), [x])
        assert np.array_equal(gx.value, [[[1.0, 1.0, -1.0, -1.0]]])

    def test_conv1d_kernel_gradient_oracle(self):
        # d(sum y)/dk_j = sum of the window entries the tap j sees.
        t = Tape()
        x = t.const(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
        k = t.leaf("k", np.array([[[1.0, 0.0, -1.0]]]))
        (gk,) = grad(t, T.sum_all(T.conv1d(x, k)), [k])
        assert np.array_equal(gk.value, [[[3.0, 5.0, 7.0]]])

    def test_relu_derivative_is_zero_at_kink(self):
        t = Tape()
        x = t.leaf("x", [0.0])
        (g,) = grad(t, T.sum_all(T.relu(x)), [x])
        assert np.array_equal(g.value, [0.0])
        assert np.array_equal(T.step(t.leaf("z", [0.0])).value, [0.0])

    def test_maxc_derivative_zero_at_threshold(self):
        t = Tape()
        x = t.leaf("x", [1.0])
        (g,) = grad(t, T.sum_all(T.maxc(x, 1.0)), [x])
        assert np.array_equal(g.value, [0.0])

    def test_matmul_gradients(self):
        t = Tape()
        a = t.leaf("a", np.array([[1.0, 2.0]]))
        b = t.leaf("b", np.array([[3.0], [4.0]]))
        ga, gb = grad(t, T.sum_all(a @ b), [a, b])
        assert np.array_equal(ga.value, [[3.0, 4.0]])
        assert np.array_equal(gb.value, [[1.0], [2.0]])

    def test_grad_accumulates_shared_subexpressions(self):
        t = Tape()
        x = t.leaf("x", 2.0)
        y = x * x + x * x
        (g,) = grad(t, y, [x])
        assert g.value == pytest.approx(8.0)


class TestReplay:
    def test_replay_same_point_is_bit_exact(self):
        rng = np.random.default_rng(0)
        t = Tape()
        x = t.leaf("x", rng.standard_normal((4, 3)))
        w = t.const(rng.standard_normal((3, 3)))
        out = T.sum_all(T.tanh(x @ w) * T.sigmoid(x))
        before = np.array(out.value, copy=True)
        after = eval_forward(t, {"x": x.value.copy()}, out)
        assert np.array_equal(before, np.asarray(after))

    def test_replay_matches_fresh_tape(self):
        def build(point):
            t = Tape()
            x = t.leaf("x", point)
            return t, T.sum_all(T.softmax_last(T.relu(x)))

        p0 = np.array([[0.3, -1.2, 2.0]])
        p1 = np.array([[1.0, 0.5, -0.25]])
        t, out = build(p0)
        replayed = eval_forward(t, {"x": p1}, out)
        _, fresh = build(p1)
        assert np.array_equal(np.asarray(replayed), fresh.value)

    def test_missing_and_unknown_leaves_rejected(self):
        t = Tape()
        x = t.leaf("x", [1.0])
        y = T.sum_all(x)
        with pytest.raises(ValueError, match="unbound leaves"):
            eval_forward(t, {}, y)
        with pytest.raises(ValueError, match="unknown leaves"):
            eval_forward(t, {"x": np.array([1.0]), "zz": np.array([1.0])}, y)

    def test_replay_nonfinite_names_the_op(self):
        t = Tape()
        x = t.leaf("x", [1.0])
        y = T.sum_all(T.log(x))
        with pytest.raises(NonFiniteError, match="log"):
            eval_forward(t, {"x": np.array([-1.0])}, y)


class TestProperties:
    @given(small_arrays())
    def test_sum_gradient_is_ones(self, arr):
        t = Tape()
        x = t.leaf("x", arr)
        (g,) = grad(t, T.sum_all(x), [x])
        assert np.array_equal(g.value, np.ones_like(arr))

    @given(small_arrays())
    def test_gradient_is_linear_in_the_output(self, arr):
        t = Tape()
        x = t.leaf("x", arr)
        y = T.sum_all(T.mul(x, x))
        (g1,) = grad(t, y, [x])
        (g3,) = grad(t, T.mul_scalar(y, 3.0), [x])
        assert np.allclose(g3.value, 3.0 * g1.value)

    @given(small_arrays((3, 4)))
    def test_softmax_rows_are_simplex_points(self, arr):
        t = Tape()
        sm = T.softmax_last(t.leaf("x", arr)).value
        assert np.all(sm >= 0)
        assert np.allclose(sm.sum(axis=-1), 1.0)

    @given(small_arrays((2, 3)), small_arrays((2, 3)))
    def test_product_rule(self, a, b):
        t = Tape()
        x = t.leaf("x", a)
        c = t.const(b)
        (g,) = grad(t, T.sum_all(T.mul(x, c)), [x])
        assert np.allclose(g.value, b)
