"""Optimizer behavior: update rule, decoupled decay, schedule, resume."""

import numpy as np
import pytest

from fusiondet.optim import AdamW, OptimConfig
from fusiondet.ops import ConfigError
from fusiondet.params import ParamStore


def make_store(shapes, seed=0):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, shape in shapes.items():
        store.add(name, rng.normal(size=shape))
    return store


class TestAdamW:
    def test_first_step_is_bias_corrected(self):
        store = make_store({"w": (3, 4)})
        w0 = store.value("w").copy()
        g = np.full((3, 4), 2.0)
        store.accumulate("w", g)
        cfg = OptimConfig(lr=1e-3, weight_decay=0.0)
        opt = AdamW(store, cfg)
        opt.step()
        # after one step m-hat = g and v-hat = g^2 exactly
        expected = w0 - cfg.lr * g / (np.abs(g) + cfg.eps)
        np.testing.assert_allclose(store.value("w"), expected, rtol=1e-15)

    def test_decay_hits_matrices_not_vectors(self):
        store = make_store({"w": (4, 4), "b": (4,)})
        w0 = store.value("w").copy()
        b0 = store.value("b").copy()
        opt = AdamW(store, OptimConfig(lr=1e-2, weight_decay=0.01))
        # zero gradients: the only movement can come from the decay term
        opt.step()
        np.testing.assert_allclose(store.value("w"), w0 * (1 - 1e-2 * 0.01),
                                   rtol=1e-15)
        np.testing.assert_array_equal(store.value("b"), b0)

    def test_converges_on_a_quadratic(self):
        store = make_store({"w": (5,)}, seed=3)
        opt = AdamW(store, OptimConfig(lr=0.05, weight_decay=0.0))
        for _ in range(400):
            store.zero_grads()
            store.accumulate("w", 2.0 * store.value("w"))
            opt.step()
        assert np.abs(store.value("w")).max() < 1e-3

    def test_resume_reproduces_the_trajectory(self):
        rng = np.random.default_rng(7)
        grads = [rng.normal(size=(3, 3)) for _ in range(10)]

        def run(opt, store, gs):
            for g in gs:
                store.zero_grads()
                store.accumulate("w", g)
                opt.step()

        store_a = make_store({"w": (3, 3)}, seed=1)
        opt_a = AdamW(store_a)
        run(opt_a, store_a, grads[:5])
        snap_state = opt_a.state_dict()
        snap_w = store_a.value("w").copy()
        run(opt_a, store_a, grads[5:])

        store_b = make_store({"w": (3, 3)}, seed=1)
        store_b.set_value("w", snap_w)
        opt_b = AdamW(store_b)
        opt_b.load_state_dict(snap_state)
        run(opt_b, store_b, grads[5:])
        np.testing.assert_array_equal(store_a.value("w"),
                                      store_b.value("w"))

    def test_state_mismatch_rejected(self):
        opt = AdamW(make_store({"w": (2, 2)}))
        other = AdamW(make_store({"x": (2, 2)}))
        with pytest.raises(ConfigError):
            opt.load_state_dict(other.state_dict())


class TestSchedule:
    def test_lr_drops_at_milestones(self):
        cfg = OptimConfig(lr=1e-4, milestones=(8, 11))
        assert cfg.lr_at_epoch(0) == 1e-4
        assert cfg.lr_at_epoch(7) == 1e-4
        assert cfg.lr_at_epoch(8) == pytest.approx(1e-5, rel=1e-12)
        assert cfg.lr_at_epoch(10) == pytest.approx(1e-5, rel=1e-12)
        assert cfg.lr_at_epoch(11) == pytest.approx(1e-6, rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            OptimConfig(lr=0.0)
        with pytest.raises(ConfigError):
            OptimConfig(betas=(1.0, 0.999))
        with pytest.raises(ConfigError):
            OptimConfig(milestones=(11, 8))
