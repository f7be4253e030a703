"""Tests for the binary checkpoint and resume-state containers."""

import numpy as np
import pytest

from fusiondet.checkpoints import (
    load_checkpoint,
    load_training_state,
    restore_params,
    save_checkpoint,
    save_training_state,
)
from fusiondet.config import RunConfig
from fusiondet.errors import CheckpointError
from fusiondet.optim import AdamW
from fusiondet.params import ParamStore


def small_store(seed=0):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("enc.w", rng.normal(size=(4, 3)))
    store.add("enc.b", rng.normal(size=4))
    store.add("head.w", rng.normal(size=(2, 4)))
    return store


class TestCheckpointRoundTrip:
    def test_values_and_config_survive(self, tmp_path):
        store = small_store()
        cfg = RunConfig(queries=16, lr=3e-3, seed=5)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, store, cfg)
        cfg2, tensors = load_checkpoint(path)
        assert cfg2 == cfg
        assert sorted(tensors) == sorted(store.names())
        for name in store.names():
            np.testing.assert_array_equal(tensors[name], store.value(name))

    def test_restore_into_fresh_store(self, tmp_path):
        store = small_store(1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, store, RunConfig())
        _, tensors = load_checkpoint(path)
        other = small_store(2)
        restore_params(other, tensors)
        for name in store.names():
            np.testing.assert_array_equal(other.value(name),
                                          store.value(name))

    def test_save_is_byte_deterministic(self, tmp_path):
        store = small_store()
        cfg = RunConfig()
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, store, cfg)
        save_checkpoint(b, store, cfg)
        assert a.read_bytes() == b.read_bytes()

    def test_save_load_save_identical(self, tmp_path):
        store = small_store()
        cfg = RunConfig(seed=9)
        a = tmp_path / "a.ckpt"
        save_checkpoint(a, store, cfg)
        cfg2, tensors = load_checkpoint(a)
        other = small_store(3)
        restore_params(other, tensors)
        b = tmp_path / "b.ckpt"
        save_checkpoint(b, other, cfg2)
        assert a.read_bytes() == b.read_bytes()


class TestCheckpointErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="no such"):
            load_checkpoint(tmp_path / "nope.ckpt")

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, small_store(), RunConfig())
        blob = p.read_bytes()
        p.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, small_store(), RunConfig())
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError):
            load_checkpoint(p)

    def test_restore_missing_tensor_named(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, small_store(), RunConfig())
        _, tensors = load_checkpoint(p)
        del tensors["head.w"]
        with pytest.raises(CheckpointError, match="head.w"):
            restore_params(small_store(4), tensors)

    def test_restore_unexpected_tensor_named(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, small_store(), RunConfig())
        _, tensors = load_checkpoint(p)
        tensors["spare"] = np.zeros(2)
        with pytest.raises(CheckpointError, match="spare"):
            restore_params(small_store(4), tensors)

    def test_restore_shape_mismatch_named(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, small_store(), RunConfig())
        _, tensors = load_checkpoint(p)
        tensors["enc.b"] = np.zeros(7)
        with pytest.raises(CheckpointError, match="enc.b"):
            restore_params(small_store(4), tensors)


class TestTrainingState:
    def test_round_trip(self, tmp_path):
        store = small_store()
        cfg = RunConfig(lr=1e-3)
        opt = AdamW(store, cfg.optim_config())
        # take one step so the moments are non-trivial
        for name in store.names():
            store.accumulate(name, np.ones_like(store.value(name)))
        opt.step(lr=1e-3)
        meta = {"epoch": 3, "step": 17, "best_val_map": 0.5,
                "checkpoint_saved": True,
                "rng": np.random.default_rng(0).bit_generator.state}
        p = tmp_path / "state.bin"
        save_training_state(p, store, opt, cfg, meta)

        cfg2, params, opt_state, meta2 = load_training_state(p)
        assert cfg2 == cfg
        assert meta2["epoch"] == 3 and meta2["step"] == 17
        assert meta2["rng"] == meta["rng"]
        assert opt_state["t"] == opt.state_dict()["t"]
        for name in store.names():
            np.testing.assert_array_equal(params[name], store.value(name))
            np.testing.assert_array_equal(opt_state["m"][name],
                                          opt.state_dict()["m"][name])
            np.testing.assert_array_equal(opt_state["v"][name],
                                          opt.state_dict()["v"][name])

    def test_truncated_state_rejected(self, tmp_path):
        store = small_store()
        cfg = RunConfig()
        opt = AdamW(store, cfg.optim_config())
        p = tmp_path / "state.bin"
        save_training_state(p, store, opt, cfg, {"epoch": 0, "step": 0,
                                                 "best_val_map": None,
                                                 "checkpoint_saved": False,
                                                 "rng": {}})
        blob = p.read_bytes()
        p.write_bytes(blob[:-20])
        with pytest.raises(CheckpointError, match="truncated"):
            load_training_state(p)

    def test_checkpoint_is_not_a_training_state(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, small_store(), RunConfig())
        with pytest.raises(CheckpointError):
            load_training_state(p)
