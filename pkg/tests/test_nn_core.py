import numpy as np
import pytest

from imfas.errors import CacheError, InputShapeError, NumericError, SpecError
from imfas.nn_core import (
    DenseLayer,
    MlpSpec,
    finite_diff_grad,
    glorot_bound,
    init_params,
    max_relative_error,
    mlp_backward,
    mlp_forward,
    named_parameters,
)


def _straight_line_forward(layers, x):
    # independent re-implementation, one scalar at a time
    acts = {
        "identity": lambda v: v,
        "relu": lambda v: v if v > 0 else 0.0,
        "tanh": np.tanh,
        "sigmoid": lambda v: 1.0 / (1.0 + np.exp(-v)),
    }
    h = list(x)
    for layer in layers:
        out = []
        for r in range(layer.out_dim):
            z = layer.bias[r] + sum(layer.weights[r, c] * h[c] for c in range(layer.in_dim))
            out.append(acts[layer.activation](z))
        h = out
    return np.array(h)


class TestForward:
    def test_identity(self):
        spec = MlpSpec((3, 3), ("identity",))
        y, _ = mlp_forward(spec, [DenseLayer(np.eye(3), np.zeros(3))], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(y, [1.0, 2.0, 3.0])

    def test_sigmoid_at_zero(self):
        spec = MlpSpec((2, 1), ("sigmoid",))
        y, _ = mlp_forward(spec, [DenseLayer([[1.0, 1.0]], [0.0], "sigmoid")], [0.0, 0.0])
        assert y[0] == 0.5

    @pytest.mark.parametrize("acts", [("relu", "identity"), ("tanh", "sigmoid"), ("sigmoid", "tanh")])
    def test_matches_straight_line(self, acts):
        spec = MlpSpec((3, 5, 2), acts)
        layers = init_params(spec, 3)
        rng = np.random.default_rng(1)
        for layer in layers:
            layer.bias[:] = rng.normal(size=layer.bias.shape)
        x = rng.normal(size=3)
        y, _ = mlp_forward(spec, layers, x)
        np.testing.assert_allclose(y, _straight_line_forward(layers, x), rtol=0, atol=1e-12)

    def test_batch_rows_match_single(self, rng):
        spec = MlpSpec.relu_hidden((4, 6, 3))
        layers = init_params(spec, 0)
        X = rng.normal(size=(5, 4))
        Y, _ = mlp_forward(spec, layers, X)
        for r in range(5):
            np.testing.assert_allclose(Y[r], mlp_forward(spec, layers, X[r])[0], atol=1e-14)

    def test_dimension_mismatch(self):
        spec = MlpSpec((3, 2), ("identity",))
        with pytest.raises(InputShapeError):
            mlp_forward(spec, init_params(spec, 0), np.ones(4))


class TestBackward:
    def test_linear_analytic_form(self, rng):
        W = rng.normal(size=(2, 3))
        spec = MlpSpec((3, 2), ("identity",))
        layers = [DenseLayer(W, np.zeros(2))]
        x = rng.normal(size=3)
        g = rng.normal(size=2)
        _, cache = mlp_forward(spec, layers, x)
        grads, gx = mlp_backward(spec, layers, cache, g)
        np.testing.assert_allclose(grads["0.weights"], np.outer(g, x))
        np.testing.assert_allclose(gx, W.T @ g)
        np.testing.assert_allclose(grads["0.bias"], g)

    def test_zero_upstream(self, rng):
        spec = MlpSpec.relu_hidden((3, 4, 2))
        layers = init_params(spec, 0)
        _, cache = mlp_forward(spec, layers, rng.normal(size=3))
        grads, gx = mlp_backward(spec, layers, cache, np.zeros(2))
        assert all(not g.any() for g in grads.values()) and not gx.any()

    @pytest.mark.parametrize("act", ["identity", "relu", "tanh", "sigmoid"])
    def test_finite_differences(self, act):
        spec = MlpSpec((3, 5, 2), (act, act))
        for seed in range(10):
            rng = np.random.default_rng(seed)
            layers = init_params(spec, seed)
            for layer in layers:
                layer.bias[:] = rng.normal(scale=0.5, size=layer.bias.shape)
            x = rng.normal(size=3)
            w = rng.normal(size=2)
            named = named_parameters(layers)
            f = lambda _: float(w @ mlp_forward(spec, layers, x)[0])
            _, cache = mlp_forward(spec, layers, x)
            grads, gx = mlp_backward(spec, layers, cache, w)
            assert max_relative_error(grads, finite_diff_grad(f, named)) <= 1e-4
            xs = {"x": x}
            fx = lambda p: float(w @ mlp_forward(spec, layers, p["x"])[0])
            assert max_relative_error({"x": gx}, finite_diff_grad(fx, xs)) <= 1e-4

    def test_batched_grads_are_sums(self, rng):
        spec = MlpSpec.relu_hidden((3, 4, 2))
        layers = init_params(spec, 5)
        X = rng.normal(size=(4, 3))
        G = rng.normal(size=(4, 2))
        _, cache = mlp_forward(spec, layers, X)
        total, _ = mlp_backward(spec, layers, cache, G)
        acc = None
        for r in range(4):
            _, c = mlp_forward(spec, layers, X[r])
            g, _ = mlp_backward(spec, layers, c, G[r])
            acc = g if acc is None else {k: acc[k] + g[k] for k in acc}
        for k in total:
            np.testing.assert_allclose(total[k], acc[k], atol=1e-13)

    def test_composition_of_single_layers(self, rng):
        spec = MlpSpec(( 3, 4, 2), ("tanh", "identity"))
        layers = init_params(spec, 2)
        x = rng.normal(size=3)
        g = rng.normal(size=2)
        _, cache = mlp_forward(spec, layers, x)
        full, gx_full = mlp_backward(spec, layers, cache, g)
        s0, s1 = MlpSpec((3, 4), ("tanh",)), MlpSpec((4, 2), ("identity",))
        h, c0 = mlp_forward(s0, layers[:1], x)
        _, c1 = mlp_forward(s1, layers[1:], h)
        g1, gh = mlp_backward(s1, layers[1:], c1, g)
        g0, gx = mlp_backward(s0, layers[:1], c0, gh)
        np.testing.assert_array_equal(full["1.weights"], g1["0.weights"])
        np.testing.assert_array_equal(full["0.weights"], g0["0.weights"])
        np.testing.assert_array_equal(gx_full, gx)

    def test_stale_cache(self, rng):
        spec = MlpSpec.relu_hidden((3, 4, 2))
        a, b = init_params(spec, 0), init_params(spec, 1)
        _, cache = mlp_forward(spec, a, rng.normal(size=3))
        with pytest.raises(CacheError):
            mlp_backward(spec, b, cache, np.ones(2))


class TestInit:
    def test_deterministic(self):
        spec = MlpSpec.relu_hidden((8, 300, 200))
        a, b = init_params(spec, 4), init_params(spec, 4)
        for la, lb in zip(a, b):
            assert np.array_equal(la.weights, lb.weights) and np.array_equal(la.bias, lb.bias)

    def test_seed_sensitive(self):
        spec = MlpSpec.relu_hidden((8, 30))
        assert not np.array_equal(init_params(spec, 4)[0].weights, init_params(spec, 5)[0].weights)

    def test_glorot_bound(self):
        assert glorot_bound(300, 200) == pytest.approx(0.10954451150103323, abs=1e-15)
        w = init_params(MlpSpec((300, 200), ("identity",)), 0)[0].weights
        assert np.abs(w).max() <= np.sqrt(6.0 / 500.0)
        assert not init_params(MlpSpec((300, 200), ("identity",)), 0)[0].bias.any()

    def test_zero_width(self):
        with pytest.raises(SpecError):
            MlpSpec((3, 0, 2), ("relu", "identity"))

    def test_activation_count(self):
        with pytest.raises(SpecError):
            MlpSpec((3, 4, 2), ("relu",))


class TestFiniteDiff:
    def test_sum(self, rng):
        p = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
        g = finite_diff_grad(lambda q: float(sum(v.sum() for v in q.values())), p)
        for v in g.values():
            np.testing.assert_allclose(v, 1.0, atol=1e-9)

    def test_half_square_norm(self, rng):
        p = {"a": rng.normal(size=(3, 2))}
        g = finite_diff_grad(lambda q: 0.5 * float((q["a"] ** 2).sum()), p)
        np.testing.assert_allclose(g["a"], p["a"], atol=1e-6)

    def test_params_restored(self, rng):
        p = {"a": rng.normal(size=5)}
        before = p["a"].copy()
        finite_diff_grad(lambda q: float(np.sin(q["a"]).sum()), p)
        np.testing.assert_array_equal(p["a"], before)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            finite_diff_grad(lambda q: float("nan"), {"a": np.ones(2)})
