"""Run configuration: INI-style file, typed schema, CLI overrides.

One file drives a whole synthesis run.  Sections group keys by module;
every key has a typed default, unknown keys are rejected rather than
ignored, and command-line overrides of the form ``section.key=value``
take precedence over the file.
"""

from __future__ import annotations

import configparser
import hashlib
import io

from .field import FieldConfig, HashGridConfig
from .objective import LossWeights
from .prior import ToyTrainConfig
from .trainer import SynthesisConfig

PRIOR_BACKENDS = ("analytic", "toy", "remote")

# section -> key -> (type, default).  Booleans use INI truthy strings.
SCHEMA = {
    "field": {
        "levels": (int, 8),
        "base_resolution": (int, 16),
        "per_level_scale": (float, 1.5),
        "table_size_log2": (int, 15),
        "features_per_level": (int, 2),
        "hidden_width": (int, 64),
        "hidden_layers": (int, 2),
        "density_bias": (float, -1.0),
    },
    "train": {
        "iterations": (int, 5000),
        "lr": (float, 1e-2),
        "lr_final": (float, 1e-3),
        "rays_per_batch": (int, 4096),
        "samples_per_ray": (int, 96),
        "background": (str, "white"),
        "novel_view_size": (int, 64),
        "radius_min": (float, 2.0),
        "radius_max": (float, 2.6),
        "elevation_min": (float, 10.0),
        "elevation_max": (float, 35.0),
        "fov_deg": (float, 45.0),
        "lambda_rec": (float, 1.0),
        "lambda_diff": (float, 1.0),
        "lambda_depth": (float, 1.0),
        "grad_mode": (str, "distilled"),
        "weight_mode": (str, "one_minus_alpha_bar"),
        "seed": (int, 0),
        "checkpoint_every": (int, 1000),
        "max_skip": (int, 3),
        "dtype": (str, "f64"),
    },
    "prior": {
        "backend": (str, "toy"),
        "timesteps": (int, 1000),
        "sigma0": (float, 0.0),
        "embed_dim": (int, 16),
        "hidden": (int, 128),
        "steps": (int, 8000),
        "batch": (int, 32),
        "lr": (float, 3e-3),
        "caption_dropout": (float, 0.5),
        "seed": (int, 0),
        "n_per_class": (int, 24),
        "image_size": (int, 32),
        "data_seed": (int, 0),
    },
    "invert": {
        "steps": (int, 400),
        "lr": (float, 2e-2),
        "draws": (int, 8),
    },
}


class ConfigError(ValueError):
    """Unknown section/key, malformed value, or unreadable file."""


def default_config() -> dict:
    """The full schema defaults as {section: {key: typed value}}."""
    return {
        section: {key: spec[1] for key, spec in keys.items()}
        for section, keys in SCHEMA.items()
    }


def _coerce(section: str, key: str, raw: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    kind = SCHEMA[section][key][0]
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(
            f"bad value for {section}.{key}: {raw!r} is not {kind.__name__}"
        ) from exc


def parse_config(text: str) -> dict:
    """Parse INI text into a fully-populated typed config dict."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = default_config()
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg_val = _coerce(section, key, raw)
            cfg[section][key] = cfg_val
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings on top of a config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not section.key=value")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override {item!r} is not section.key=value")
        section, key = dotted.split(".", 1)
        cfg[section.strip()][key.strip()] = _coerce(section.strip(),
                                                    key.strip(), raw.strip())
    return cfg


def load_config(path=None, overrides=()) -> dict:
    """Read a config file (or defaults when path is None) plus overrides."""
    if path is None:
        cfg = default_config()
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                cfg = parse_config(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return apply_overrides(cfg, overrides)


def render_config_text(cfg: dict) -> str:
    """The config dict back as canonical INI text (sorted, typed reprs)."""
    parser = configparser.ConfigParser()
    for section in SCHEMA:
        parser[section] = {
            key: str(cfg[section][key]) for key in SCHEMA[section]
        }
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def config_hash(cfg: dict) -> str:
    """Short stable digest of the effective configuration."""
    return hashlib.sha256(
        render_config_text(cfg).encode("utf-8")
    ).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Dataclass projections


def field_config(cfg: dict) -> FieldConfig:
    f = cfg["field"]
    return FieldConfig(
        grid=HashGridConfig(
            levels=f["levels"],
            base_resolution=f["base_resolution"],
            per_level_scale=f["per_level_scale"],
            table_size_log2=f["table_size_log2"],
            features_per_level=f["features_per_level"],
        ),
        hidden_width=f["hidden_width"],
        hidden_layers=f["hidden_layers"],
        density_bias=f["density_bias"],
    )


def synthesis_config(cfg: dict) -> SynthesisConfig:
    t = cfg["train"]
    return SynthesisConfig(
        iterations=t["iterations"],
        lr=t["lr"],
        lr_final=t["lr_final"],
        rays_per_batch=t["rays_per_batch"],
        samples_per_ray=t["samples_per_ray"],
        background=t["background"],
        novel_view_size=t["novel_view_size"],
        radius_range=(t["radius_min"], t["radius_max"]),
        elevation_range_deg=(t["elevation_min"], t["elevation_max"]),
        fov_deg=t["fov_deg"],
        weights=LossWeights(lambda_rec=t["lambda_rec"],
                            lambda_diff=t["lambda_diff"],
                            lambda_depth=t["lambda_depth"]),
        grad_mode=t["grad_mode"],
        weight_mode=t["weight_mode"],
        seed=t["seed"],
        checkpoint_every=t["checkpoint_every"],
        max_skip=t["max_skip"],
        dtype=t["dtype"],
    )


def toy_train_config(cfg: dict) -> ToyTrainConfig:
    p = cfg["prior"]
    return ToyTrainConfig(
        embed_dim=p["embed_dim"],
        hidden=p["hidden"],
        steps=p["steps"],
        batch=p["batch"],
        lr=p["lr"],
        caption_dropout=p["caption_dropout"],
        seed=p["seed"],
    )


def prior_backend(cfg: dict) -> str:
    backend = cfg["prior"]["backend"]
    if backend not in PRIOR_BACKENDS:
        raise ConfigError(
            f"prior.backend must be one of {PRIOR_BACKENDS}, got {backend!r}"
        )
    return backend
