"""Tests for the INI config schema, overrides, hashing, and projections."""

import numpy as np
import pytest

from monofield.config import (
    ConfigError,
    SCHEMA,
    apply_overrides,
    config_hash,
    default_config,
    field_config,
    load_config,
    parse_config,
    prior_backend,
    render_config_text,
    synthesis_config,
    toy_train_config,
)
from monofield.field import FieldConfig
from monofield.prior import ToyTrainConfig
from monofield.trainer import SynthesisConfig


class TestDefaults:
    def test_every_schema_key_present_and_typed(self):
        cfg = default_config()
        assert set(cfg) == set(SCHEMA)
        for section, keys in SCHEMA.items():
            assert set(cfg[section]) == set(keys)
            for key, (kind, default) in keys.items():
                assert isinstance(cfg[section][key], kind)
                assert cfg[section][key] == default

    def test_defaults_project_to_valid_dataclasses(self):
        cfg = default_config()
        assert isinstance(field_config(cfg), FieldConfig)
        assert isinstance(synthesis_config(cfg), SynthesisConfig)
        assert isinstance(toy_train_config(cfg), ToyTrainConfig)
        assert prior_backend(cfg) in ("analytic", "toy", "remote")


class TestParsing:
    def test_partial_file_keeps_other_defaults(self):
        cfg = parse_config("[train]\niterations = 7\n")
        assert cfg["train"]["iterations"] == 7
        assert cfg["train"]["lr"] == SCHEMA["train"]["lr"][1]
        assert cfg["field"]["levels"] == SCHEMA["field"]["levels"][1]

    def test_types_are_coerced(self):
        cfg = parse_config("[train]\nlr = 0.5\nseed = 3\nbackground = black\n")
        assert cfg["train"]["lr"] == 0.5
        assert cfg["train"]["seed"] == 3
        assert cfg["train"]["background"] == "black"

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="section"):
            parse_config("[volcano]\nheat = 9\n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="train.warmup"):
            parse_config("[train]\nwarmup = 10\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="iterations"):
            parse_config("[train]\niterations = soon\n")

    def test_malformed_ini_rejected(self):
        with pytest.raises(ConfigError, match="malformed"):
            parse_config("iterations = 7\n")  # key before any section


class TestOverrides:
    def test_override_applies_with_coercion(self):
        cfg = apply_overrides(default_config(),
                              ["train.iterations=11", "prior.sigma0=0.4"])
        assert cfg["train"]["iterations"] == 11
        assert cfg["prior"]["sigma0"] == 0.4

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            apply_overrides(default_config(), ["train.iterations"])

    def test_missing_dot_rejected(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            apply_overrides(default_config(), ["iterations=11"])

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            apply_overrides(default_config(), ["train.bogus=1"])


class TestLoad:
    def test_none_path_gives_defaults(self):
        assert load_config(None) == default_config()

    def test_file_plus_overrides(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[train]\niterations = 7\nlr = 0.5\n")
        cfg = load_config(path, ["train.iterations=9"])
        assert cfg["train"]["iterations"] == 9
        assert cfg["train"]["lr"] == 0.5

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.ini")


class TestCanonicalText:
    def test_render_parse_round_trip(self):
        cfg = apply_overrides(default_config(),
                              ["train.lr=0.005", "field.levels=4",
                               "prior.backend=analytic"])
        back = parse_config(render_config_text(cfg))
        assert back == cfg

    def test_hash_stable_and_sensitive(self):
        a = default_config()
        b = apply_overrides(default_config(), ["train.seed=1"])
        assert config_hash(a) == config_hash(default_config())
        assert config_hash(a) != config_hash(b)
        assert len(config_hash(a)) == 16
        int(config_hash(a), 16)  # hex digest prefix


class TestProjections:
    def test_field_projection_carries_grid_values(self):
        cfg = apply_overrides(default_config(),
                              ["field.levels=4", "field.table_size_log2=10",
                               "field.hidden_width=32"])
        fc = field_config(cfg)
        assert fc.grid.levels == 4
        assert fc.grid.table_size_log2 == 10
        assert fc.hidden_width == 32

    def test_synthesis_projection_builds_ranges_and_weights(self):
        cfg = apply_overrides(default_config(),
                              ["train.radius_min=2.1", "train.radius_max=2.4",
                               "train.lambda_depth=0.25"])
        sc = synthesis_config(cfg)
        assert sc.radius_range == (2.1, 2.4)
        assert sc.weights.lambda_depth == 0.25

    def test_invalid_projection_values_surface(self):
        cfg = apply_overrides(default_config(), ["train.iterations=-3"])
        with pytest.raises(ValueError, match="non-negative"):
            synthesis_config(cfg)

    def test_unknown_backend_rejected(self):
        cfg = default_config()
        cfg["prior"]["backend"] = "astral"
        with pytest.raises(ConfigError, match="backend"):
            prior_backend(cfg)
