import numpy as np
import numpy.testing as npt
import pytest

from edgan import autodiff as ad
from edgan.autodiff import DiffTensor, Graph, Param
from edgan.errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    GraphConsumedError,
    NumericError,
)
from edgan.gradcheck import grad_check
from edgan.optim import Adam, AdamState, adam_step
from edgan.rng import RngState


def leaf(values, requires_grad=False, mode="train"):
    g = Graph(mode=mode)
    return g, g.tensor(values, requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        g, a = leaf(np.eye(2))
        b = g.tensor([[1.0, 2.0], [3.0, 4.0]])
        npt.assert_array_equal((a @ b).values, [[1.0, 2.0], [3.0, 4.0]])

    def test_one_by_one(self):
        g, a = leaf([[1.0, 2.0]])
        b = g.tensor([[3.0], [4.0]])
        npt.assert_array_equal((a @ b).values, [[11.0]])

    def test_shape_mismatch_names_both_shapes(self):
        g, a = leaf(np.zeros((2, 3)))
        b = g.tensor(np.zeros((2, 3)))
        with pytest.raises(DimensionError, match=r"\(2, 3\)"):
            a @ b

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        err = grad_check(lambda g, a, b: (a @ b).mean(), [a, b])
        assert err < 1e-4


class TestElementwise:
    def test_relu_values(self):
        g, x = leaf([-1.0, 0.0, 2.0])
        npt.assert_array_equal(x.relu().values, [0.0, 0.0, 2.0])

    def test_sigmoid_at_zero(self):
        g, x = leaf(0.0)
        assert x.sigmoid().item() == 0.5

    def test_tanh_gradient_at_zero(self):
        g, x = leaf(0.0, requires_grad=True)
        g.backward(x.tanh())
        assert x.grad == pytest.approx(1.0)

    def test_log_domain_error(self):
        g, x = leaf([1.0, 0.0])
        with pytest.raises(DomainError):
            x.log()

    def test_binary_requires_equal_shapes(self):
        g, a = leaf([1.0, 2.0])
        b = g.tensor([[1.0, 2.0]])
        with pytest.raises(DimensionError):
            a + b

    def test_scalar_broadcast_allowed(self):
        g, a = leaf([1.0, 2.0])
        npt.assert_array_equal((1.0 - a).values, [0.0, -1.0])
        npt.assert_array_equal((a * 2.0).values, [2.0, 4.0])

    def test_clamp_gradient_routing(self):
        g, x = leaf([-1.0, 0.5, 2.0], requires_grad=True)
        g.backward(x.clamp(0.0, 1.0).sum())
        npt.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_cross_graph_operands_rejected(self):
        _, a = leaf([1.0])
        _, b = leaf([1.0])
        with pytest.raises(ContractError):
            a + b


class TestConv1d:
    def test_hand_cross_correlation(self):
        g, x = leaf([[1.0, 2.0, 4.0]])
        k = g.tensor([[[1.0, -1.0]]])
        npt.assert_array_equal(ad.conv1d(x, k, 1).values, [[-1.0, -2.0]])

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 9))
        k = rng.standard_normal((3, 2, 3))
        stride = 2
        g = Graph()
        out = ad.conv1d(g.tensor(x), g.tensor(k), stride).values
        t_out = (9 - 3) // stride + 1
        expected = np.zeros((3, t_out))
        for o in range(3):
            for t in range(t_out):
                for c in range(2):
                    for w in range(3):
                        expected[o, t] += x[c, t * stride + w] * k[o, c, w]
        npt.assert_allclose(out, expected, atol=1e-12)

    def test_identity_kernel(self):
        g, x = leaf([[5.0, -1.0, 2.0]])
        k = g.tensor([[[1.0]]])
        npt.assert_array_equal(ad.conv1d(x, k, 1).values, x.values)

    def test_kernel_wider_than_input(self):
        g, x = leaf(np.zeros((1, 2)))
        k = g.tensor(np.zeros((1, 1, 3)))
        with pytest.raises(DimensionError):
            ad.conv1d(x, k, 1)

    def test_gradient_check(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 8))
        k = rng.standard_normal((3, 2, 3))
        err = grad_check(lambda g, x, k: ad.conv1d(x, k, 1).mean(), [x, k])
        assert err < 1e-4

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 2, 7))
        k = rng.standard_normal((3, 2, 2))
        g = Graph()
        batched = ad.conv1d(g.tensor(x), g.tensor(k), 1).values
        for b in range(4):
            g2 = Graph()
            single = ad.conv1d(g2.tensor(x[b]), g2.tensor(k), 1).values
            npt.assert_allclose(batched[b], single, atol=1e-14)


class TestLayerNorm:
    def test_constant_vector_centers_to_bias(self):
        g, x = leaf([5.0, 5.0, 5.0])
        gain = g.tensor(np.ones(3))
        bias = g.tensor(np.zeros(3))
        npt.assert_allclose(ad.layer_norm(x, gain, bias).values, [0.0, 0.0, 0.0], atol=1e-12)

    def test_unit_variance_passthrough(self):
        g, x = leaf([1.0, -1.0])
        gain = g.tensor(np.ones(2))
        bias = g.tensor(np.zeros(2))
        out = ad.layer_norm(x, gain, bias, eps=1e-14).values
        npt.assert_allclose(out, [1.0, -1.0], atol=1e-6)

    def test_gradient_check(self):
        rng = np.random.default_rng(6)
        err = grad_check(
            lambda g, x, gain, bias: (ad.layer_norm(x, gain, bias) * g.tensor(rng2)).sum(),
            [rng.standard_normal(6), rng.standard_normal(6), rng.standard_normal(6)],
        )
        assert err < 1e-4

    def test_batched_rows_independent(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((3, 5))
        gain = rng.standard_normal(5)
        bias = rng.standard_normal(5)
        g = Graph()
        batched = ad.layer_norm(g.tensor(x), g.tensor(gain), g.tensor(bias)).values
        for i in range(3):
            g2 = Graph()
            row = ad.layer_norm(g2.tensor(x[i]), g2.tensor(gain), g2.tensor(bias)).values
            npt.assert_allclose(batched[i], row, atol=1e-14)


rng2 = np.random.default_rng(99).standard_normal(6)


class TestDropout:
    def test_rate_zero_identity(self):
        g, x = leaf([1.0, 2.0, 3.0])
        assert ad.dropout(x, 0.0, RngState(0)) is x

    def test_eval_mode_identity(self):
        g = Graph(mode="eval")
        x = g.tensor([1.0, 2.0])
        assert ad.dropout(x, 0.5, RngState(0)) is x

    def test_rate_one_rejected(self):
        g, x = leaf([1.0])
        with pytest.raises(ConfigError):
            ad.dropout(x, 1.0, RngState(0))

    def test_survivor_statistics(self):
        g, x = leaf(np.full(100_000, 2.0))
        out = ad.dropout(x, 0.5, RngState(123)).values
        survivors = np.count_nonzero(out) / out.size
        assert abs(survivors - 0.5) < 0.02
        assert abs(out.mean() - 2.0) / 2.0 < 0.02

    def test_gradient_is_mask_scaled(self):
        g, x = leaf(np.ones(1000), requires_grad=True)
        out = ad.dropout(x, 0.25, RngState(7))
        g.backward(out.sum())
        mask = out.values != 0
        npt.assert_allclose(x.grad[mask], 1.0 / 0.75)
        npt.assert_allclose(x.grad[~mask], 0.0)


class TestReduce:
    def test_mean_value(self):
        g, x = leaf([1.0, 2.0, 3.0])
        assert x.mean().item() == 2.0

    def test_sum_over_axis(self):
        g, x = leaf([[1.0, 2.0], [3.0, 4.0]])
        npt.assert_array_equal(x.sum(axis=0).values, [4.0, 6.0])

    def test_mean_gradient_uniform(self):
        g, x = leaf([1.0, 2.0, 3.0], requires_grad=True)
        g.backward(x.mean())
        npt.assert_allclose(x.grad, [1 / 3, 1 / 3, 1 / 3])

    def test_invalid_axis(self):
        g, x = leaf([1.0, 2.0])
        with pytest.raises(DimensionError):
            x.sum(axis=2)


class TestStructural:
    def test_reshape_round_trip(self):
        g, x = leaf(np.arange(6.0))
        npt.assert_array_equal(x.reshape((2, 3)).reshape((6,)).values, x.values)

    def test_reshape_count_mismatch(self):
        g, x = leaf(np.arange(6.0))
        with pytest.raises(DimensionError):
            x.reshape((4, 2))

    def test_concat(self):
        g, a = leaf([1.0, 2.0])
        b = g.tensor([3.0])
        npt.assert_array_equal(ad.concat([a, b]).values, [1.0, 2.0, 3.0])

    def test_concat_incompatible(self):
        g, a = leaf(np.zeros((2, 2)))
        b = g.tensor(np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            ad.concat([a, b], axis=0)

    def test_slice_gradient_routing(self):
        g, x = leaf(np.arange(5.0), requires_grad=True)
        g.backward(x[1:3].sum())
        npt.assert_array_equal(x.grad, [0.0, 1.0, 1.0, 0.0, 0.0])

    def test_transpose_gradient(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 3, 4))
        w = rng.standard_normal((4, 3, 2))
        err = grad_check(lambda g, x: (x.transpose((2, 1, 0)) * g.tensor(w)).sum(), [x])
        assert err < 1e-6

    def test_shape_algebra_random(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            m, n, p = rng.integers(1, 6, size=3)
            g = Graph()
            out = g.tensor(rng.standard_normal((m, n))) @ g.tensor(rng.standard_normal((n, p)))
            assert out.values.shape == (m, p)
            joined = ad.concat([g.tensor(rng.standard_normal((m, n))) for _ in range(3)], axis=1)
            assert joined.values.shape == (m, 3 * n)
            assert joined.reshape((n, 3 * m)).values.shape == (n, 3 * m)


class TestBackward:
    def test_square_gradient(self):
        g, x = leaf(3.0, requires_grad=True)
        g.backward(x * x)
        assert x.grad == pytest.approx(6.0)

    def test_log_sigmoid_gradient(self):
        g, x = leaf(0.0, requires_grad=True)
        g.backward(x.sigmoid().log())
        assert x.grad == pytest.approx(0.5)

    def test_non_scalar_loss_rejected(self):
        g, x = leaf([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            g.backward(x)

    def test_consumed_graph_errors(self):
        g, x = leaf(2.0, requires_grad=True)
        loss = x * x
        g.backward(loss)
        with pytest.raises(GraphConsumedError):
            g.backward(loss)
        with pytest.raises(GraphConsumedError):
            x * x

    def test_two_layer_mlp_gradcheck(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((1, 4))
        w1 = rng.standard_normal((4, 5))
        b1 = rng.standard_normal(5)
        w2 = rng.standard_normal((5, 1))
        b2 = rng.standard_normal(1)

        def fn(g, x, w1, b1, w2, b2):
            h = ad.add_bias(x @ w1, b1).tanh()
            return ad.add_bias(h @ w2, b2).mean()

        assert grad_check(fn, [x, w1, b1, w2, b2]) < 1e-4

    def test_shared_parameter_accumulates(self):
        g = Graph()
        p = Param("w", np.array([[2.0]]))
        w = g.watch(p)
        x1 = g.tensor([[3.0]])
        x2 = g.tensor([[4.0]])
        out = (x1 @ w + x2 @ w).mean()
        g.backward(out)
        assert g.grad(p) == pytest.approx(np.array([[7.0]]))

    def test_frozen_watch_gets_no_grad(self):
        g = Graph()
        p = Param("w", np.array([[2.0]]))
        w = g.watch(p, trainable=False)
        g2_loss = (g.tensor([[3.0]], requires_grad=True) @ w).mean()
        g.backward(g2_loss)
        npt.assert_array_equal(g.grad(p), np.zeros((1, 1)))

    def test_nonfinite_leaf_rejected(self):
        g = Graph()
        with pytest.raises(NumericError):
            g.tensor([np.inf])


class TestGradCheckHarness:
    def test_linear_function_near_exact(self):
        rng = np.random.default_rng(12)
        w = rng.standard_normal(6)
        err = grad_check(lambda g, x: (x * g.tensor(w)).sum(), [rng.standard_normal(6)])
        assert err < 1e-8

    def test_rejects_non_scalar(self):
        with pytest.raises(ContractError):
            grad_check(lambda g, x: x, [np.ones(3)])

    def test_rejects_bad_step(self):
        with pytest.raises(ConfigError):
            grad_check(lambda g, x: x.sum(), [np.ones(3)], step=0.0)


class TestRandomizedGradients:
    """Every differentiable op passes finite-difference checks on random shapes."""

    @pytest.mark.parametrize("seed", range(20))
    def test_op_family(self, seed):
        rng = np.random.default_rng(seed)
        m, n, p = rng.integers(2, 5, size=3)
        x = rng.standard_normal((m, n))
        w = rng.standard_normal((n, p))
        b = rng.standard_normal(p)
        gain = rng.standard_normal(n)
        bias = rng.standard_normal(n)
        cx = rng.standard_normal((2, 6))
        ck = rng.standard_normal((2, 2, 2))

        checks = [
            (lambda g, x, w: (x @ w).tanh().mean(), [x, w]),
            (lambda g, x, w, b: ad.add_bias(x @ w, b).sigmoid().sum(), [x, w, b]),
            (lambda g, x: x.relu().sum(), [x + 0.1]),
            (lambda g, x: (x * x).clamp(0.01, 50.0).log().sum(), [x + 3.0]),
            (lambda g, x, gain, bias: ad.layer_norm(x, gain, bias).sum(), [x, gain, bias]),
            (lambda g, cx, ck: ad.conv1d(cx, ck, 2).mean(), [cx, ck]),
            (lambda g, x: ad.concat([x[:1, :], x[1:, :]], axis=0).mean(axis=0).sum(), [x]),
        ]
        for fn, inputs in checks:
            assert grad_check(fn, inputs) < 1e-4


class TestRngState:
    def test_same_seed_same_draws(self):
        a = RngState(42).stream("dropout").random(16)
        b = RngState(42).stream("dropout").random(16)
        npt.assert_array_equal(a, b)

    def test_streams_are_independent(self):
        state = RngState(42)
        first = state.stream("init").random(8)
        state.stream("dropout").random(100)
        again = RngState(42)
        again.stream("dropout").random(3)  # different call pattern on the other stream
        npt.assert_array_equal(again.stream("init").random(8), first)

    def test_different_names_differ(self):
        state = RngState(1)
        assert not np.array_equal(state.stream("a").random(8), state.stream("b").random(8))


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Param("w", np.array([1.0, -2.0]))
        state = AdamState([p])
        before = p.data.copy()
        adam_step([p], [np.zeros(2)], state, lr=0.1)
        npt.assert_array_equal(p.data, before)

    def test_first_step_magnitude(self):
        for grad in (0.3, -5.0, 42.0):
            p = Param("w", np.array([0.0]))
            state = AdamState([p])
            adam_step([p], [np.array([grad])], state, lr=0.01)
            delta = abs(p.data[0])
            assert 0.9 * 0.01 <= delta <= 0.01
            assert np.sign(-p.data[0]) == np.sign(grad)

    def test_hundred_constant_steps(self):
        p = Param("w", np.array([5.0]))
        opt = Adam([p], lr=0.01)
        for _ in range(100):
            opt.step([np.array([1.0])])
        moved = 5.0 - p.data[0]
        assert abs(moved - 1.0) < 0.1

    def test_shape_mismatch(self):
        p = Param("w", np.zeros(3))
        state = AdamState([p])
        with pytest.raises(DimensionError):
            adam_step([p], [np.zeros(4)], state, lr=0.1)


class TestDeterminism:
    def test_identical_seed_bitwise_trajectory(self):
        def run(seed):
            rng = RngState(seed)
            p = Param("w", rng.stream("init").standard_normal((4, 3)))
            opt = Adam([p], lr=1e-2)
            for _ in range(5):
                g = Graph()
                w = g.watch(p)
                x = g.tensor(rng.stream("data").standard_normal((2, 4)))
                out = ad.dropout((x @ w).tanh(), 0.3, rng)
                g.backward((out * out).mean())
                opt.step([g.grad(p)])
            return p.data.copy()

        npt.assert_array_equal(run(7), run(7))
        assert not np.array_equal(run(7), run(8))
