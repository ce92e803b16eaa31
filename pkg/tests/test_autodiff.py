"""Tensor engine tests: closed-form values, gradient checks, graph replay.

Every differentiable op is checked against central finite differences at
random probe points, on top of hand-computable special values (sigmoid at
zero, exclusive cumulative products, broadcasting reductions).  The
finite-difference oracle is independent of the engine's own VJP table.
"""

import threading

import numpy as np
import pytest

from monofield import autodiff as ad
from monofield.autodiff import Tensor, apply, backward, gradcheck, no_grad


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class TestForwardValues:
    def test_sigmoid_at_zero_is_half(self):
        out = apply("sigmoid", Tensor([0.0]))
        np.testing.assert_allclose(out.data, [0.5], rtol=0, atol=0)

    def test_softplus_at_zero_is_log_two(self):
        out = apply("softplus", Tensor([0.0]))
        np.testing.assert_allclose(out.data, [np.log(2.0)], rtol=1e-15)

    def test_sigmoid_saturates_without_overflow(self):
        out = apply("sigmoid", Tensor([-1000.0, 1000.0]))
        np.testing.assert_allclose(out.data, [0.0, 1.0], atol=1e-12)
        assert np.isfinite(out.data).all()

    def test_softplus_large_positive_is_identity_like(self):
        out = apply("softplus", Tensor([80.0]))
        np.testing.assert_allclose(out.data, [80.0], rtol=1e-12)

    def test_cumprod_exclusive_shifts_by_one(self):
        # out_i = prod of strictly earlier entries, so out_0 is always 1
        out = apply("cumprod_exclusive", Tensor([2.0, 3.0, 4.0]), axis=-1)
        np.testing.assert_allclose(out.data, [1.0, 2.0, 6.0], rtol=0)

    def test_cumprod_exclusive_responds_past_zeros(self):
        out = apply("cumprod_exclusive", Tensor([0.5, 0.0, 7.0]), axis=-1)
        np.testing.assert_allclose(out.data, [1.0, 0.5, 0.0], rtol=0)

    def test_cumprod_exclusive_batched_axis(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(0.5, 1.5, size=(4, 6))
        out = apply("cumprod_exclusive", Tensor(x), axis=1)
        for r in range(4):
            want = np.concatenate([[1.0], np.cumprod(x[r])[:-1]])
            np.testing.assert_allclose(out.data[r], want, rtol=1e-15)

    def test_mean_matches_sum_over_count(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((5, 7))
        m = apply("mean", Tensor(x), axis=0)
        np.testing.assert_allclose(m.data, x.sum(axis=0) / 5.0, rtol=1e-15)

    def test_broadcast_then_sum_recovers_scale(self):
        x = leaf(np.array([[1.0], [2.0], [3.0]]))
        wide = apply("broadcast", x, shape=(3, 4))
        assert wide.shape == (3, 4)
        total = wide.sum()
        np.testing.assert_allclose(total.data, 24.0)

    def test_gather_picks_rows_with_repeats(self):
        table = Tensor(np.arange(12, dtype=np.float64).reshape(6, 2))
        idx = np.array([0, 3, 3, 5])
        out = apply("gather", table, indices=idx)
        np.testing.assert_allclose(out.data, table.data[idx], rtol=0)

    def test_operator_sugar_matches_apply(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((2, 3, 3))
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_array_equal((ta + tb).data, apply("add", ta, tb).data)
        np.testing.assert_array_equal((ta * tb).data, apply("mul", ta, tb).data)
        np.testing.assert_array_equal((ta @ tb).data, apply("matmul", ta, tb).data)
        np.testing.assert_array_equal((ta ** 2).data, apply("power", ta, exponent=2.0).data)


class TestBackwardStructure:
    def test_linearity_of_gradients(self):
        """grad(a*f + b*g) == a*grad(f) + b*grad(g) to float64 resolution."""
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal(6)

        def grad_of(alpha, beta):
            x = leaf(x0)
            f = (x ** 2).sum()
            g = apply("exp", x * 0.3).sum()
            loss = alpha * f + beta * g
            return backward(loss)[x]

        gf = grad_of(1.0, 0.0)
        gg = grad_of(0.0, 1.0)
        combo = grad_of(0.7, -1.3)
        np.testing.assert_allclose(combo, 0.7 * gf - 1.3 * gg, atol=1e-12)

    def test_backward_requires_scalar(self):
        x = leaf(np.ones(4))
        with pytest.raises(ValueError, match="scalar"):
            backward(x * 2.0)

    def test_backward_twice_accumulates(self):
        x = leaf(np.array(3.0))
        y = x * x
        backward(y)
        np.testing.assert_allclose(x.grad, 6.0)
        backward(y)
        np.testing.assert_allclose(x.grad, 12.0)

    def test_shared_subexpression_accumulates_once_per_path(self):
        x = leaf(np.array(2.0))
        y = x * x          # dy/dx = 2x = 4
        z = y + y          # dz/dx = 2 * 4 = 8
        grads = backward(z)
        np.testing.assert_allclose(grads[x], 8.0)

    def test_unreached_leaf_gets_no_grad(self):
        x = leaf(np.ones(3))
        y = leaf(np.ones(3))
        loss = (x * 2.0).sum()
        grads = backward(loss)
        assert x in grads and y not in grads
        assert y.grad is None

    def test_no_grad_suppresses_graph(self):
        x = leaf(np.ones(3))
        with no_grad():
            y = (x * 3.0).sum()
        assert y.node is None and not y.requires_grad

    def test_broadcast_binary_grads_reduce_correctly(self):
        a = leaf(np.ones((3, 1)))
        b = leaf(np.ones((1, 4)))
        loss = (a * b).sum()
        grads = backward(loss)
        assert grads[a].shape == (3, 1)
        assert grads[b].shape == (1, 4)
        np.testing.assert_allclose(grads[a], np.full((3, 1), 4.0))
        np.testing.assert_allclose(grads[b], np.full((1, 4), 3.0))

    def test_gather_gradient_accumulates_duplicate_rows(self):
        table = leaf(np.zeros((5, 2)))
        idx = np.array([1, 1, 1, 4])
        out = apply("gather", table, indices=idx)
        loss = out.sum()
        grads = backward(loss)
        want = np.zeros((5, 2))
        want[1] = 3.0
        want[4] = 1.0
        np.testing.assert_allclose(grads[table], want)

    def test_independent_graphs_on_threads(self):
        """Graphs built concurrently on separate threads stay independent."""
        results = {}

        def work(seed):
            rng = np.random.default_rng(seed)
            x = leaf(rng.standard_normal(8))
            loss = (apply("sigmoid", x) ** 2).sum()
            results[seed] = backward(loss)[x]

        threads = [threading.Thread(target=work, args=(s,)) for s in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for seed in range(4):
            rng = np.random.default_rng(seed)
            x = leaf(rng.standard_normal(8))
            loss = (apply("sigmoid", x) ** 2).sum()
            np.testing.assert_array_equal(results[seed], backward(loss)[x])


def weighted(out, w):
    return (out * w).sum()


class TestGradcheckPerOp:
    """Central-difference checks for every op in the registry."""

    def check(self, f, probes, tol=1e-6, **kw):
        err = gradcheck(f, probes, **kw)
        assert err < tol, f"max rel grad error {err:.3e}"

    def test_add_sub_mul(self):
        rng = np.random.default_rng(10)
        w = Tensor(rng.standard_normal((3, 4)))
        a = leaf(rng.standard_normal((3, 4)))
        b = leaf(rng.standard_normal((3, 4)))
        self.check(lambda a, b: weighted(a + b, w), [a, b])
        self.check(lambda a, b: weighted(a - b, w), [a, b])
        self.check(lambda a, b: weighted(a * b, w), [a, b])

    def test_binary_ops_with_broadcasting(self):
        rng = np.random.default_rng(11)
        w = Tensor(rng.standard_normal((3, 4)))
        a = leaf(rng.standard_normal((3, 1)))
        b = leaf(rng.standard_normal((1, 4)))
        self.check(lambda a, b: weighted(a + b, w), [a, b])
        self.check(lambda a, b: weighted(a * b, w), [a, b])

    def test_div(self):
        rng = np.random.default_rng(12)
        w = Tensor(rng.standard_normal((4, 4)))
        a = leaf(rng.standard_normal((4, 4)))
        b = leaf(rng.uniform(0.5, 2.0, (4, 4)) * np.sign(rng.standard_normal((4, 4))))
        self.check(lambda a, b: weighted(a / b, w), [a, b])

    def test_matmul(self):
        rng = np.random.default_rng(13)
        w = Tensor(rng.standard_normal((3, 5)))
        a = leaf(rng.standard_normal((3, 4)))
        b = leaf(rng.standard_normal((4, 5)))
        self.check(lambda a, b: weighted(a @ b, w), [a, b])

    @pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True)])
    def test_sum_and_mean(self, axis, keepdims):
        rng = np.random.default_rng(14)
        x = leaf(rng.standard_normal((3, 5)))

        def f_sum(x):
            out = apply("sum", x, axis=axis, keepdims=keepdims)
            return weighted(out, Tensor(np.ones(out.shape)))

        def f_mean(x):
            out = apply("mean", x, axis=axis, keepdims=keepdims)
            return weighted(out, Tensor(np.ones(out.shape)))

        self.check(f_sum, x)
        self.check(f_mean, x)

    @pytest.mark.parametrize("kind", ["exp", "sigmoid", "softplus"])
    def test_smooth_unaries(self, kind):
        rng = np.random.default_rng(15)
        w = Tensor(rng.standard_normal(16))
        x = leaf(rng.uniform(-2.0, 2.0, 16))
        self.check(lambda x: weighted(apply(kind, x), w), x)

    def test_log(self):
        rng = np.random.default_rng(16)
        w = Tensor(rng.standard_normal(16))
        x = leaf(rng.uniform(0.2, 3.0, 16))
        self.check(lambda x: weighted(apply("log", x), w), x)

    def test_relu_away_from_kink(self):
        rng = np.random.default_rng(17)
        signs = np.sign(rng.standard_normal(16))
        x = leaf(signs * rng.uniform(0.1, 1.0, 16))
        w = Tensor(rng.standard_normal(16))
        self.check(lambda x: weighted(apply("relu", x), w), x)

    @pytest.mark.parametrize("p", [2.0, 3.0, 2.5, -2.0])
    def test_power(self, p):
        rng = np.random.default_rng(18)
        w = Tensor(rng.standard_normal(12))
        x = leaf(rng.uniform(0.3, 2.0, 12))
        self.check(lambda x: weighted(apply("power", x, exponent=p), w), x)

    def test_concat(self):
        rng = np.random.default_rng(19)
        parts = [leaf(rng.standard_normal((2, k))) for k in (1, 3, 2)]
        w = Tensor(rng.standard_normal((2, 6)))
        self.check(lambda *ps: weighted(apply("concat", *ps, axis=1), w), parts)

    def test_slice(self):
        rng = np.random.default_rng(20)
        x = leaf(rng.standard_normal((4, 6)))
        w = Tensor(rng.standard_normal((2, 3)))
        self.check(lambda x: weighted(x[1:3, ::2], w), x)

    def test_gather(self):
        rng = np.random.default_rng(21)
        table = leaf(rng.standard_normal((8, 3)))
        idx = np.array([0, 2, 2, 7, 5, 2])
        w = Tensor(rng.standard_normal((6, 3)))
        self.check(lambda t: weighted(apply("gather", t, indices=idx), w), table)

    def test_cumprod_exclusive(self):
        rng = np.random.default_rng(22)
        x = leaf(rng.uniform(0.2, 1.5, (3, 7)))
        w = Tensor(rng.standard_normal((3, 7)))
        self.check(
            lambda x: weighted(apply("cumprod_exclusive", x, axis=1), w), x
        )

    def test_cumprod_exclusive_with_exact_zero(self):
        """The VJP scan must stay correct when an input entry is zero."""
        rng = np.random.default_rng(23)
        vals = rng.uniform(0.3, 1.2, 6)
        vals[2] = 0.0
        x = leaf(vals)
        w = Tensor(rng.standard_normal(6))
        self.check(
            lambda x: weighted(apply("cumprod_exclusive", x, axis=0), w), x
        )

    def test_broadcast(self):
        rng = np.random.default_rng(24)
        x = leaf(rng.standard_normal((3, 1)))
        w = Tensor(rng.standard_normal((3, 5)))
        self.check(lambda x: weighted(apply("broadcast", x, shape=(3, 5)), w), x)

    def test_reshape(self):
        rng = np.random.default_rng(25)
        x = leaf(rng.standard_normal((3, 4)))
        w = Tensor(rng.standard_normal((2, 6)))
        self.check(lambda x: weighted(x.reshape(2, 6), w), x)

    def test_composite_mlp_like_chain(self):
        """A two-layer network touching matmul, add, relu, sigmoid, mean."""
        rng = np.random.default_rng(26)
        x = Tensor(rng.standard_normal((5, 3)))
        w1 = leaf(rng.standard_normal((3, 8)) * 0.5)
        b1 = leaf(np.zeros((1, 8)))
        w2 = leaf(rng.standard_normal((8, 2)) * 0.5)

        def f(w1, b1, w2):
            h = apply("relu", x @ w1 + b1 + 0.3)
            y = apply("sigmoid", h @ w2)
            return (y ** 2).mean()

        self.check(f, [w1, b1, w2], tol=1e-5)


class TestErrorHandling:
    def test_mixed_dtype_raises_and_names_op(self):
        a = Tensor(np.ones(3, dtype=np.float32))
        b = Tensor(np.ones(3, dtype=np.float64))
        with pytest.raises(TypeError, match="add"):
            apply("add", a, b)

    def test_div_by_exact_zero_raises(self):
        a = Tensor(np.ones(3))
        b = Tensor(np.array([1.0, 0.0, 2.0]))
        with pytest.raises(ValueError, match="div"):
            apply("div", a, b)

    def test_log_nonpositive_raises_without_guard(self):
        with pytest.raises(ValueError, match="log"):
            apply("log", Tensor(np.array([1.0, -0.5])))

    def test_log_eps_guard_clamps(self):
        out = apply("log", Tensor(np.array([1.0, -0.5])), eps=1e-6)
        np.testing.assert_allclose(out.data[1], np.log(1e-6))

    def test_matmul_shape_error_names_shapes(self):
        a = Tensor(np.ones((3, 4)))
        b = Tensor(np.ones((5, 2)))
        with pytest.raises(ValueError, match=r"matmul.*\(3, 4\).*\(5, 2\)"):
            apply("matmul", a, b)

    def test_power_negative_base_fractional_exponent_raises(self):
        with pytest.raises(ValueError, match="power"):
            apply("power", Tensor(np.array([-1.0])), exponent=0.5)

    def test_gather_out_of_range_raises(self):
        table = Tensor(np.ones((4, 2)))
        with pytest.raises(IndexError, match="gather"):
            apply("gather", table, indices=np.array([0, 4]))

    def test_unknown_op_kind_raises(self):
        with pytest.raises(KeyError, match="unknown op"):
            apply("transmogrify", Tensor(np.ones(2)))

    def test_gradcheck_rejects_float32_probe(self):
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        with pytest.raises(TypeError, match="float64"):
            gradcheck(lambda x: (x * x).sum(), x)

    def test_gradcheck_rejects_nonfinite_objective(self):
        x = leaf(np.array([1.0]))

        def f(x):
            return apply("log", x - 1.0 - 1.0)  # log of a negative constant path

        with pytest.raises((FloatingPointError, ValueError)):
            gradcheck(f, x)


class TestTapeReplay:
    def test_replay_is_bit_identical(self):
        rng = np.random.default_rng(30)
        x = leaf(rng.standard_normal((4, 4)))
        w = leaf(rng.standard_normal((4, 4)))
        with ad.Tape() as tape:
            h = apply("softplus", x @ w)
            loss = (h * h).mean()
        n = tape.replay()
        assert n == 4  # matmul, softplus, mul, mean
        assert loss.size == 1

    def test_replay_detects_mutation(self):
        x = leaf(np.ones((3, 3)))
        with ad.Tape() as tape:
            y = (x * 2.0).sum()
        tape.tensors[tape.records[-1].out_id].data += 1.0
        with pytest.raises(ad.ReplayMismatch):
            tape.replay()
        assert y.size == 1

    def test_nested_tape_rejected(self):
        with ad.Tape():
            with pytest.raises(RuntimeError):
                with ad.Tape():
                    pass

    def test_records_reference_only_earlier_outputs(self):
        """Acyclicity: each record's inputs are leaves or prior outputs."""
        rng = np.random.default_rng(31)
        x = leaf(rng.standard_normal(5))
        with ad.Tape() as tape:
            y = apply("exp", x)
            z = (y + x).sum()
        seen = set()
        for rec in tape.records:
            for tid in rec.input_ids:
                produced_later = any(
                    r.out_id == tid for r in tape.records[tape.records.index(rec):]
                )
                assert tid in seen or not produced_later
            seen.add(rec.out_id)
        assert z.size == 1
