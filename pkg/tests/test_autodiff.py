import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shallowfusion import autodiff as ad

from oracles import central_difference


def _rand(rng, *shape):
    return rng.normal(size=shape)


class TestForwardExamples:
    def test_softmax_uniform(self):
        out = ad.softmax(ad.constant(np.zeros(3)))
        np.testing.assert_allclose(out.values, [1 / 3] * 3)

    def test_matmul_identity(self):
        A = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(ad.matmul(ad.constant(np.eye(2)), ad.constant(A)).values, A)

    def test_log_softmax_normalized(self):
        x = np.random.default_rng(0).normal(size=(4, 7)) * 10
        out = ad.log_softmax(ad.constant(x)).values
        np.testing.assert_allclose(np.exp(out).sum(axis=-1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("scale", [1e2, 1e3, 1e4])
    def test_softmax_large_inputs_finite(self, scale):
        x = ad.constant(np.array([scale, -scale, 0.0]))
        assert np.all(np.isfinite(ad.softmax(x).values))
        assert np.all(np.isfinite(ad.log_softmax(x).values))

    def test_shape_error_names_op(self):
        with pytest.raises(ad.ShapeError, match="matmul"):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nonfinite_output_is_error(self):
        with pytest.raises(ad.NumericError):
            ad.mul(ad.constant(np.array([1e308])), ad.constant(np.array([1e308])))

    def test_slice_and_concat_round_trip(self):
        x = np.arange(12.0).reshape(3, 4)
        t = ad.constant(x)
        parts = [ad.slice(t, (slice(None), slice(0, 2))), ad.slice(t, (slice(None), slice(2, 4)))]
        np.testing.assert_array_equal(ad.concat(parts, axis=1).values, x)

    def test_embed_lookup(self):
        table = np.arange(6.0).reshape(3, 2)
        out = ad.embed_lookup(ad.constant(table), [2, 0, 2])
        np.testing.assert_array_equal(out.values, table[[2, 0, 2]])


class TestBackwardExamples:
    def test_product_rule(self):
        x, y = ad.param(2.0), ad.param(3.0)
        ad.backward(ad.mul(x, y))
        assert x.grad == pytest.approx(3.0)
        assert y.grad == pytest.approx(2.0)

    def test_sum_of_softmax_has_zero_grad(self):
        x = ad.param(np.random.default_rng(1).normal(size=5))
        (g,) = ad.backward(ad.sum(ad.softmax(x)), wrt=[x])
        np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_non_scalar_root_rejected(self):
        with pytest.raises(ad.ContractError):
            ad.backward(ad.param(np.ones(3)))

    def test_unreachable_leaf_gets_zero(self):
        x, unused = ad.param(np.ones(2)), ad.param(np.ones((2, 2)))
        gx, gu = ad.backward(ad.sum(ad.mul(x, x)), wrt=[x, unused])
        np.testing.assert_array_equal(gx, [2.0, 2.0])
        np.testing.assert_array_equal(gu, np.zeros((2, 2)))

    def test_fan_out_accumulates(self):
        x = ad.param(np.array([1.5]))
        y = ad.add(ad.mul(x, x), ad.mul(x, ad.constant(np.array([3.0]))))
        (g,) = ad.backward(ad.sum(y), wrt=[x])
        np.testing.assert_allclose(g, [2 * 1.5 + 3.0])

    def test_leaf_grad_accumulates_across_calls(self):
        x = ad.param(np.array([1.0, 2.0]))
        for _ in range(2):
            ad.backward(ad.sum(ad.mul(x, ad.constant(np.array([3.0, 4.0])))))
        np.testing.assert_array_equal(x.grad, [6.0, 8.0])

    def test_stop_gradient_blocks_flow(self):
        x = ad.param(np.array([2.0]))
        y = ad.mul(x, ad.stop_gradient(x))
        (g,) = ad.backward(ad.sum(y), wrt=[x])
        np.testing.assert_allclose(g, [2.0])

    def test_no_grad_records_nothing(self):
        x = ad.param(np.array([1.0]))
        with ad.no_grad():
            y = ad.mul(x, x)
        assert not y.requires_grad

    def test_topological_order_parents_first(self):
        a = ad.param(np.ones(2))
        b = ad.tanh(a)
        c = ad.add(b, a)
        d = ad.sum(ad.mul(c, b))
        order = ad.topological_order(d)
        pos = {t._id: i for i, t in enumerate(order)}
        for node in order:
            for p in node._parents:
                assert pos[p._id] < pos[node._id]

    def test_sibling_order_does_not_change_grads(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(3, 3))
        x1 = ad.param(w.copy())
        b1 = [ad.tanh(x1), ad.sigmoid(x1), ad.mul(x1, x1)]
        (g1,) = ad.backward(ad.sum(ad.add(ad.add(b1[0], b1[1]), b1[2])), wrt=[x1])
        x2 = ad.param(w.copy())
        b2 = [ad.mul(x2, x2), ad.sigmoid(x2), ad.tanh(x2)]
        (g2,) = ad.backward(ad.sum(ad.add(ad.add(b2[0], b2[1]), b2[2])), wrt=[x2])
        np.testing.assert_allclose(g1, g2, rtol=0, atol=1e-12)


class TestGradCheck:
    def test_quadratic_exact(self):
        theta = ad.param(np.random.default_rng(0).normal(size=6))
        err = ad.grad_check(lambda: ad.mul(ad.sum(ad.mul(theta, theta)), ad.constant(0.5)), [theta])
        assert err < 1e-8

    def test_constant_loss(self):
        theta = ad.param(np.ones(3))
        (g,) = ad.backward(ad.add(ad.sum(ad.mul(theta, ad.constant(np.zeros(3)))), ad.constant(4.0)),
                           wrt=[theta])
        np.testing.assert_array_equal(g, 0.0)
        assert ad.grad_check(lambda: ad.sum(ad.mul(theta, ad.constant(np.zeros(3)))), [theta]) == 0.0

    def test_lstm_cell(self):
        rng = np.random.default_rng(5)
        x, h, c = (ad.param(_rand(rng, 2, 3)), ad.param(_rand(rng, 2, 4)), ad.param(_rand(rng, 2, 4)))
        w, b = ad.param(_rand(rng, 7, 16) * 0.5), ad.param(_rand(rng, 16))

        def loss():
            h2, c2 = ad.lstm_cell(x, h, c, w, b)
            return ad.sum(ad.mul(ad.add(h2, c2), ad.constant(np.arange(8.0).reshape(2, 4))))

        assert ad.grad_check(loss, [x, h, c, w, b]) < 1e-4

    def test_two_layer_net_against_numpy_oracle(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(5, 3))
        W1, W2 = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))

        def np_loss(w1):
            z = np.tanh(X @ w1) @ W2
            z = z - z.max(axis=1, keepdims=True)
            return float((z - np.log(np.exp(z).sum(axis=1, keepdims=True)))[:, 0].sum())

        p1 = ad.param(W1.copy())
        out = ad.log_softmax(ad.matmul(ad.tanh(ad.matmul(ad.constant(X), p1)), ad.constant(W2)))
        (g,) = ad.backward(ad.sum(ad.slice(out, (slice(None), 0))), wrt=[p1])
        fd = central_difference(np_loss, W1)
        rel = np.abs(g - fd) / np.maximum(1e-8, np.abs(g) + np.abs(fd))
        assert rel.max() < 1e-4


UNARY = {"tanh": ad.tanh, "sigmoid": ad.sigmoid, "softmax": ad.softmax, "log_softmax": ad.log_softmax,
         "transpose": ad.transpose}


@st.composite
def _shape_seed(draw):
    return draw(st.integers(1, 4)), draw(st.integers(1, 5)), draw(st.integers(0, 2**31 - 1))


class TestPrimitiveGradients:
    """Every primitive against central differences on random shapes."""

    @settings(max_examples=100, deadline=None)
    @given(_shape_seed(), st.sampled_from(sorted(UNARY)))
    def test_unary(self, shape_seed, name):
        n, m, seed = shape_seed
        rng = np.random.default_rng(seed)
        x = ad.param(rng.normal(size=(n, m)))
        weights = ad.constant(rng.normal(size=(m, n) if name == "transpose" else (n, m)))
        assert ad.grad_check(lambda: ad.sum(ad.mul(UNARY[name](x), weights)), [x]) < 1e-4

    @settings(max_examples=100, deadline=None)
    @given(_shape_seed(), st.sampled_from(["add", "mul", "add_bcast", "mul_bcast"]))
    def test_binary(self, shape_seed, name):
        n, m, seed = shape_seed
        rng = np.random.default_rng(seed)
        a = ad.param(rng.normal(size=(n, m)))
        b = ad.param(rng.normal(size=(m,) if name.endswith("bcast") else (n, m)))
        op = ad.add if name.startswith("add") else ad.mul
        w = ad.constant(rng.normal(size=(n, m)))
        assert ad.grad_check(lambda: ad.sum(ad.mul(op(a, b), w)), [a, b]) < 1e-4

    @settings(max_examples=100, deadline=None)
    @given(_shape_seed(), st.integers(1, 4), st.sampled_from(["2d2d", "1d2d", "2d1d"]))
    def test_matmul(self, shape_seed, k, form):
        n, m, seed = shape_seed
        rng = np.random.default_rng(seed)
        a = ad.param(rng.normal(size=(m,) if form == "1d2d" else (n, m)))
        b = ad.param(rng.normal(size=(m,) if form == "2d1d" else (m, k)))
        out_shape = ad.matmul(a, b).shape
        w = ad.constant(rng.normal(size=out_shape))
        assert ad.grad_check(lambda: ad.sum(ad.mul(ad.matmul(a, b), w)), [a, b]) < 1e-4

    @settings(max_examples=100, deadline=None)
    @given(_shape_seed(), st.sampled_from([None, 0, 1]))
    def test_sum_slice_concat(self, shape_seed, axis):
        n, m, seed = shape_seed
        rng = np.random.default_rng(seed)
        a, b = ad.param(rng.normal(size=(n, m))), ad.param(rng.normal(size=(n, m)))
        w = rng.normal(size=(2 * n, m))

        def loss():
            cat = ad.concat([a, b], axis=0)
            part = ad.slice(ad.mul(cat, ad.constant(w)), (slice(0, n + 1), slice(None)))
            s = ad.sum(part, axis=axis)
            return ad.sum(ad.mul(s, s))

        assert ad.grad_check(loss, [a, b]) < 1e-4

    @settings(max_examples=100, deadline=None)
    @given(_shape_seed())
    def test_embed_lookup(self, shape_seed):
        n, m, seed = shape_seed
        rng = np.random.default_rng(seed)
        table = ad.param(rng.normal(size=(n + 1, m)))
        ids = rng.integers(0, n + 1, size=4)
        w = ad.constant(rng.normal(size=(4, m)))
        assert ad.grad_check(lambda: ad.sum(ad.mul(ad.embed_lookup(table, ids), w)), [table]) < 1e-4
