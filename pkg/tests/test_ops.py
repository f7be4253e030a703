"""Unit tests for the differentiable primitives.

Forward values are checked against hand-computed expectations; every
backward is checked against central finite differences computed here,
independently of the library's own gradient checker.
"""

import numpy as np
import pytest

from fusiondet.params import ParamStore
from fusiondet import ops
from fusiondet.ops import (
    MlpSpec,
    bilinear_sample,
    bilinear_sample_backward,
    bilinear_sample_forward,
    cosine_sim,
    cosine_sim_backward,
    cosine_sim_forward,
    hidden_mlp,
    layer_norm_backward,
    layer_norm_forward,
    linear_backward,
    linear_forward,
    mlp_backward,
    mlp_forward,
    register_layer_norm,
    register_linear,
    register_mlp,
    relu_backward,
    relu_forward,
    sigmoid,
    softmax,
    softmax_backward,
    softplus,
)


def numgrad(f, x, h=1e-6):
    """Central finite differences of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def rel_err(a, b):
    denom = max(1e-8, np.abs(a).max() + np.abs(b).max())
    return np.abs(a - b).max() / denom


class TestLinear:
    def test_identity_weight_adds_bias(self):
        store = ParamStore()
        rng = np.random.default_rng(0)
        register_linear(store, "lin", 3, 3, rng)
        store.set_value("lin.w", np.eye(3))
        store.set_value("lin.b", np.array([1.0, 2.0, 3.0]))
        x = np.array([[0.5, -1.0, 2.0]])
        y, _ = linear_forward(store, "lin", x)
        np.testing.assert_allclose(y, [[1.5, 1.0, 5.0]])

    def test_zero_init_outputs_bias(self):
        store = ParamStore()
        rng = np.random.default_rng(0)
        register_linear(store, "lin", 4, 2, rng, zero=True)
        x = rng.normal(size=(5, 4))
        y, _ = linear_forward(store, "lin", x)
        np.testing.assert_array_equal(y, np.zeros((5, 2)))

    def test_shape_mismatch_raises(self):
        store = ParamStore()
        register_linear(store, "lin", 3, 2, np.random.default_rng(0))
        with pytest.raises(ops.DimensionError):
            linear_forward(store, "lin", np.zeros((2, 4)))

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(7)
        store = ParamStore()
        register_linear(store, "lin", 4, 3, rng)
        x = rng.normal(size=(5, 4))
        dy = rng.normal(size=(5, 3))

        y, cache = linear_forward(store, "lin", x)
        dx = linear_backward(store, cache, dy)

        def loss_x(xv):
            yv, _ = linear_forward(store, "lin", xv)
            return float((yv * dy).sum())

        assert rel_err(dx, numgrad(loss_x, x.copy())) < 1e-8

        for name in ("lin.w", "lin.b"):
            base = store.value(name).copy()

            def loss_p(pv, name=name, base=base):
                store.set_value(name, pv)
                yv, _ = linear_forward(store, "lin", x)
                store.set_value(name, base)
                return float((yv * dy).sum())

            assert rel_err(store.grad(name), numgrad(loss_p, base.copy())) < 1e-8


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.array([1.0, 1.0])), [0.5, 0.5])

    def test_log_odds(self):
        # exp(0) : exp(ln 3) = 1 : 3
        y = softmax(np.array([0.0, np.log(3.0)]))
        np.testing.assert_allclose(y, [0.25, 0.75], atol=1e-15)

    def test_overflow_safe(self):
        y = softmax(np.array([1000.0, 0.0]))
        np.testing.assert_allclose(y, [1.0, 0.0])
        assert np.isfinite(y).all()

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        y = softmax(rng.normal(size=(6, 9)) * 10, axis=-1)
        np.testing.assert_allclose(y.sum(axis=-1), np.ones(6), atol=1e-14)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 6))
        dy = rng.normal(size=(4, 6))
        y = softmax(x, axis=-1)
        dx = softmax_backward(y, dy, axis=-1)
        g = numgrad(lambda xv: float((softmax(xv, axis=-1) * dy).sum()), x.copy())
        assert rel_err(dx, g) < 1e-8


class TestLayerNorm:
    def _store(self, d):
        store = ParamStore()
        register_layer_norm(store, "ln", d)
        return store

    def test_constant_row_maps_to_bias(self):
        store = self._store(4)
        store.set_value("ln.b", np.array([1.0, 2.0, 3.0, 4.0]))
        y, _ = layer_norm_forward(store, "ln", np.full((2, 4), 7.0))
        np.testing.assert_allclose(y, np.tile([1.0, 2.0, 3.0, 4.0], (2, 1)),
                                   atol=1e-12)

    def test_two_point_row(self):
        store = self._store(2)
        y, _ = layer_norm_forward(store, "ln", np.array([[-1.0, 1.0]]))
        expect = np.array([[-1.0, 1.0]]) / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(y, expect, rtol=1e-14)

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(23)
        store = self._store(6)
        store.set_value("ln.g", rng.normal(size=6))
        store.set_value("ln.b", rng.normal(size=6))
        x = rng.normal(size=(5, 6)) * 2.0
        dy = rng.normal(size=(5, 6))
        _, cache = layer_norm_forward(store, "ln", x)
        dx = layer_norm_backward(store, cache, dy)

        def loss_x(xv):
            yv, _ = layer_norm_forward(store, "ln", xv)
            return float((yv * dy).sum())

        assert rel_err(dx, numgrad(loss_x, x.copy())) < 1e-7

        for name in ("ln.g", "ln.b"):
            base = store.value(name).copy()

            def loss_p(pv, name=name, base=base):
                store.set_value(name, pv)
                yv, _ = layer_norm_forward(store, "ln", x)
                store.set_value(name, base)
                return float((yv * dy).sum())

            assert rel_err(store.grad(name), numgrad(loss_p, base.copy())) < 1e-7


class TestMlp:
    def test_hidden_mlp_flags(self):
        spec = hidden_mlp(8, 8, 4)
        assert spec.relu == (True, True, False)
        assert spec.layer_norm == (False, False, False)

    def test_bad_spec_rejected(self):
        with pytest.raises(ops.ConfigError):
            MlpSpec(widths=(4, 4), relu=(True,))

    def test_forward_matches_manual_composition(self):
        rng = np.random.default_rng(5)
        store = ParamStore()
        spec = MlpSpec(widths=(5, 3), relu=(True, False),
                       layer_norm=(True, False))
        register_mlp(store, "m", 4, spec, rng)
        x = rng.normal(size=(6, 4))
        y, _ = mlp_forward(store, "m", x, spec)

        h = x @ store.value("m.0.w") + store.value("m.0.b")
        mu = h.mean(-1, keepdims=True)
        v = h.var(-1, keepdims=True)
        h = (h - mu) / np.sqrt(v + 1e-5)
        h = h * store.value("m.0.ln.g") + store.value("m.0.ln.b")
        h = np.maximum(h, 0.0)
        h = h @ store.value("m.1.w") + store.value("m.1.b")
        np.testing.assert_allclose(y, h, atol=1e-12)

    def test_zero_last_layer(self):
        rng = np.random.default_rng(9)
        store = ParamStore()
        spec = hidden_mlp(7, 3)
        register_mlp(store, "m", 4, spec, rng, zero_last=True)
        y, _ = mlp_forward(store, "m", rng.normal(size=(5, 4)), spec)
        np.testing.assert_array_equal(y, np.zeros((5, 3)))

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(17)
        store = ParamStore()
        spec = MlpSpec(widths=(6, 5, 2), relu=(True, True, False),
                       layer_norm=(False, True, False))
        register_mlp(store, "m", 3, spec, rng)
        x = rng.normal(size=(7, 3))
        dy = rng.normal(size=(7, 2))
        _, cache = mlp_forward(store, "m", x, spec)
        dx = mlp_backward(store, cache, dy)

        def loss_x(xv):
            yv, _ = mlp_forward(store, "m", xv, spec)
            return float((yv * dy).sum())

        assert rel_err(dx, numgrad(loss_x, x.copy())) < 1e-6

        for name in list(store.names()):
            base = store.value(name).copy()

            def loss_p(pv, name=name, base=base):
                store.set_value(name, pv)
                yv, _ = mlp_forward(store, "m", x, spec)
                store.set_value(name, base)
                return float((yv * dy).sum())

            assert rel_err(store.grad(name), numgrad(loss_p, base.copy())) < 1e-6


class TestCosineSim:
    def test_identities(self):
        a = np.array([1.0, 2.0, 3.0])
        assert cosine_sim(a, 5.0 * a) == pytest.approx(1.0, abs=1e-14)
        assert cosine_sim(a, -a) == pytest.approx(-1.0, abs=1e-14)
        assert cosine_sim(np.array([1.0, 0.0]), np.array([0.0, 4.0])) == 0.0

    def test_zero_vector_is_zero_not_nan(self):
        c = cosine_sim(np.zeros(3), np.array([1.0, 2.0, 3.0]))
        assert c == 0.0

    def test_batched_rows(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(10, 4))
        b = rng.normal(size=(10, 4))
        c = cosine_sim(a, b)
        for i in range(10):
            assert c[i] == pytest.approx(cosine_sim(a[i], b[i]), abs=1e-14)

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(31)
        a = rng.normal(size=(8, 5))
        b = rng.normal(size=(8, 5))
        dc = rng.normal(size=8)
        _, cache = cosine_sim_forward(a, b)
        da, db = cosine_sim_backward(cache, dc)
        ga = numgrad(lambda av: float((cosine_sim_forward(av, b)[0] * dc).sum()),
                     a.copy())
        gb = numgrad(lambda bv: float((cosine_sim_forward(a, bv)[0] * dc).sum()),
                     b.copy())
        assert rel_err(da, ga) < 1e-7
        assert rel_err(db, gb) < 1e-7


class TestBilinearSample:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.fmap = rng.normal(size=(5, 7, 3))

    def test_grid_points_exact(self):
        H, W, _ = self.fmap.shape
        for i in (0, 2, H - 1):
            for j in (0, 3, W - 1):
                uv = np.array([j / (W - 1), i / (H - 1)])
                np.testing.assert_allclose(bilinear_sample(self.fmap, uv),
                                           self.fmap[i, j], atol=1e-12)

    def test_midpoint_is_four_corner_mean(self):
        fmap = np.arange(8.0).reshape(2, 2, 2)
        out = bilinear_sample(fmap, np.array([0.5, 0.5]))
        np.testing.assert_allclose(out, fmap.reshape(4, 2).mean(axis=0))

    def test_outside_unit_square_is_zero(self):
        for uv in ([-0.01, 0.5], [1.01, 0.5], [0.5, -0.2], [0.5, 1.2]):
            np.testing.assert_array_equal(
                bilinear_sample(self.fmap, np.array(uv)), np.zeros(3))

    def test_grads_match_finite_differences(self):
        rng = np.random.default_rng(41)
        # keep coords off the floor() kinks so central differences are valid
        uv = rng.uniform(0.05, 0.95, size=(6, 2))
        uv = np.round(uv * 23) / 23 + 0.013
        dout = rng.normal(size=(6, 3))
        _, cache = bilinear_sample_forward(self.fmap, uv)
        dmap, duv = bilinear_sample_backward(cache, dout)

        gmap = numgrad(
            lambda m: float((bilinear_sample_forward(m, uv)[0] * dout).sum()),
            self.fmap.copy())
        guv = numgrad(
            lambda c: float((bilinear_sample_forward(self.fmap, c)[0] * dout).sum()),
            uv.copy())
        assert rel_err(dmap, gmap) < 1e-7
        assert rel_err(duv, guv) < 1e-7

    def test_invalid_coords_get_zero_grad(self):
        uv = np.array([[0.5, 0.5], [1.5, 0.5]])
        dout = np.ones((2, 3))
        _, cache = bilinear_sample_forward(self.fmap, uv)
        _, duv = bilinear_sample_backward(cache, dout)
        np.testing.assert_array_equal(duv[1], np.zeros(2))


class TestScalarNonlinearities:
    def test_relu_zero_subgradient_at_zero(self):
        x = np.array([-1.0, 0.0, 2.0])
        y, cache = relu_forward(x)
        np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])
        dx = relu_backward(cache, np.ones(3))
        np.testing.assert_array_equal(dx, [0.0, 0.0, 1.0])

    def test_sigmoid_values_and_stability(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5
        assert sigmoid(np.array([800.0]))[0] == 1.0
        assert sigmoid(np.array([-800.0]))[0] == pytest.approx(0.0, abs=1e-300)
        assert np.isfinite(sigmoid(np.array([-800.0, 800.0]))).all()

    def test_softplus_values_and_stability(self):
        assert softplus(np.array([0.0]))[0] == pytest.approx(np.log(2.0))
        assert softplus(np.array([1000.0]))[0] == pytest.approx(1000.0)
        assert softplus(np.array([-1000.0]))[0] == pytest.approx(0.0, abs=1e-300)

    def test_softplus_grad(self):
        x = np.array([-3.0, -0.2, 0.0, 1.7])
        g = ops.softplus_backward(x, np.ones_like(x))
        gn = numgrad(lambda v: float(softplus(v).sum()), x.copy())
        np.testing.assert_allclose(g, gn, atol=1e-9)
