"""Tests for the flat run configuration."""

import json

import pytest

from fusiondet.config import (
    RunConfig,
    apply_overrides,
    config_from_dict,
    load_config,
)
from fusiondet.errors import InputError, ParseError


class TestRunConfig:
    def test_defaults_valid(self):
        cfg = RunConfig()
        assert cfg.queries == 64
        assert cfg.scales == (5, 10, 20)
        assert cfg.max_steps is None

    def test_dict_round_trip(self):
        cfg = RunConfig(queries=32, scales=(4, 8), lr=3e-3, seed=7)
        assert config_from_dict(cfg.to_dict()) == cfg

    def test_to_dict_is_json_serializable(self):
        doc = RunConfig().to_dict()
        assert json.loads(json.dumps(doc)) == doc

    def test_unknown_key_rejected(self):
        with pytest.raises(InputError, match="learning_rate"):
            config_from_dict({"learning_rate": 1e-3})

    def test_heads_must_divide_channels(self):
        with pytest.raises(InputError, match="divide"):
            RunConfig(channels=10, heads=4)

    def test_bool_is_not_an_integer(self):
        with pytest.raises(InputError):
            config_from_dict({"queries": True})

    @pytest.mark.parametrize("field,value", [
        ("queries", 0),
        ("lr", 0.0),
        ("lr_decay", 0.0),
        ("lr_decay", 1.5),
        ("weight_decay", -0.1),
        ("voxel_size", 0.0),
        ("scales", ()),
        ("scales", (3, 0)),
        ("lr_milestones", (5, 2)),
        ("max_steps", 0),
        ("batch_size", -1),
    ])
    def test_invalid_field_rejected(self, field, value):
        with pytest.raises(InputError):
            RunConfig(**{field: value})

    def test_scales_list_coerced_to_tuple(self):
        cfg = config_from_dict({"scales": [3, 6]})
        assert cfg.scales == (3, 6)

    def test_derived_configs_carry_fields(self):
        cfg = RunConfig(queries=16, channels=32, heads=4, stages=2,
                        num_classes=3, num_points=1024, lr=2e-3,
                        weight_decay=0.05, lr_milestones=(4,), lr_decay=0.5)
        m = cfg.model_config()
        assert (m.queries, m.channels, m.stages, m.classes) == (16, 32, 2, 3)
        o = cfg.optim_config()
        assert (o.lr, o.weight_decay, o.milestones, o.decay_factor) == \
            (2e-3, 0.05, (4,), 0.5)
        s = cfg.scene_spec()
        assert (s.num_classes, s.num_points) == (3, 1024)


class TestLoadConfig:
    def test_loads_json_file(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps({"queries": 32, "lr": 0.005}))
        cfg = load_config(p)
        assert cfg.queries == 32 and cfg.lr == 0.005

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError, match="missing"):
            load_config(tmp_path / "nope.json")

    def test_malformed_json_names_line(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text('{"queries": 32,\n  "lr": }')
        with pytest.raises(ParseError, match="line 2"):
            load_config(p)

    def test_bad_value_wrapped_as_parse_error(self, tmp_path):
        p = tmp_path / "run.json"
        p.write_text(json.dumps({"queries": -3}))
        with pytest.raises(ParseError, match="queries"):
            load_config(p)


class TestApplyOverrides:
    def test_override_replaces_field(self):
        cfg = apply_overrides(RunConfig(), {"lr": 0.01, "seed": 3})
        assert cfg.lr == 0.01 and cfg.seed == 3

    def test_no_overrides_returns_same_config(self):
        base = RunConfig()
        assert apply_overrides(base, {}) is base

    def test_unknown_override_rejected(self):
        with pytest.raises(InputError, match="unknown config key"):
            apply_overrides(RunConfig(), {"decay": 0.5})

    def test_override_is_validated(self):
        with pytest.raises(InputError):
            apply_overrides(RunConfig(), {"heads": 7})
