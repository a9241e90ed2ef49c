"""Config files: JSON to TrainConfig, named presets, CLI overrides.

Per-scene hyperparameters (smoothness weight, curriculum window, initial grid
resolution) are expressed as named presets so the tuning applied to each scene
stays explicit and auditable.  A config JSON may name a preset; explicit keys
then override the preset's values.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .errors import ConfigError
from .optim import TrainConfig

_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}

# Full-scale per-scene tuning for the synthetic static benchmark.
_STATIC_BASE = {"mode": "static3d", "channels": 48, "final_res": 200,
                "width": 256, "lambda2": 1.0,
                "lambda3_start": 8e-5, "lambda3_end": 4e-5}
_STATIC_SCENES = {
    "chair":     {"lambda1": 0.001, "initial_res": 16},
    "drums":     {"lambda1": 0.005, "initial_res": 3,
                  "curriculum_enabled": True, "curriculum_start_pct": 5,
                  "curriculum_end_pct": 95},
    "ficus":     {"lambda1": 0.005, "initial_res": 3},
    "hotdog":    {"lambda1": 0.009, "initial_res": 24},
    "lego":      {"lambda1": 0.009, "initial_res": 48,
                  "curriculum_enabled": True, "curriculum_start_pct": 10,
                  "curriculum_end_pct": 50},
    "materials": {"lambda1": 0.001, "initial_res": 48},
    "mic":       {"lambda1": 0.009, "initial_res": 48,
                  "curriculum_enabled": True, "curriculum_start_pct": 0,
                  "curriculum_end_pct": 50},
    "ship":      {"lambda1": 0.005, "initial_res": 3},
}

# Full-scale per-scene tuning for the monocular dynamic benchmark.
_DYNAMIC_BASE = {"mode": "dynamic4d", "channels": 48, "initial_res": 16,
                 "final_res": 200, "width": 256, "lambda2": 2.5,
                 "lambda3_start": 1e-5, "lambda3_end": 1e-5}
_DYNAMIC_SCENES = {
    "bouncingballs": {"lambda1": 0.001},
    "hellwarrior":   {"lambda1": 0.005, "curriculum_enabled": True,
                      "curriculum_start_pct": 5, "curriculum_end_pct": 95},
    "hook":          {"lambda1": 0.001},
    "jumpingjacks":  {"lambda1": 0.001},
    "lego":          {"lambda1": 0.05, "curriculum_enabled": True,
                      "curriculum_start_pct": 5, "curriculum_end_pct": 95},
    "mutant":        {"lambda1": 0.001},
    "standup":       {"lambda1": 0.05, "curriculum_enabled": True,
                      "curriculum_start_pct": 5, "curriculum_end_pct": 95},
    "trex":          {"lambda1": 0.05, "curriculum_enabled": True,
                      "curriculum_start_pct": 5, "curriculum_end_pct": 95},
}

# Desk-scale presets matching the shipped synthetic scenes and test budgets.
_DESK = {
    "desk/spheres": {
        "mode": "static3d", "channels": 8, "initial_res": 16, "final_res": 96,
        "width": 32, "total_iters": 5000, "batch_size": 256, "n_samples": 32,
        "lambda1": 1e-3, "lambda2": 1.0, "lambda3_start": 1e-6,
        "lambda3_end": 1e-6, "eval_every": 1000,
    },
    "desk/moving-sphere": {
        "mode": "dynamic4d", "channels": 4, "initial_res": 16, "final_res": 32,
        "time_res": 12, "width": 32, "total_iters": 2500, "batch_size": 256,
        "n_samples": 32, "lambda1": 2e-3, "lambda2": 2.5,
        "lambda3_start": 1e-5, "lambda3_end": 1e-5,
        "curriculum_enabled": True, "curriculum_start_pct": 0,
        "curriculum_end_pct": 40, "eval_every": 500,
    },
}

PRESETS = {
    **{f"static/{k}": {**_STATIC_BASE, **v} for k, v in _STATIC_SCENES.items()},
    **{f"dynamic/{k}": {**_DYNAMIC_BASE, **v} for k, v in _DYNAMIC_SCENES.items()},
    **_DESK,
}


def _check_keys(mapping: dict, where: str):
    unknown = sorted(set(mapping) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown} in {where}; "
                          f"valid keys: {sorted(_FIELDS)}")


def make_config(values: dict | None = None, preset: str | None = None) -> TrainConfig:
    """TrainConfig from an optional preset plus explicit key overrides."""
    merged: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; "
                              f"available: {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
    if values:
        _check_keys(values, "config")
        merged.update(values)
    try:
        return TrainConfig(**merged)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid config: {e}") from e


def load_config(path) -> TrainConfig:
    """Read a plain-JSON config; an optional "preset" key seeds the values."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no config file at {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {p}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {p} must be a JSON object")
    preset = raw.pop("preset", None)
    return make_config(raw, preset)


def _coerce(field_name: str, text: str):
    f = _FIELDS[field_name]
    default = f.default if f.default is not dataclasses.MISSING else None
    kind = f.type
    try:
        if kind == "bool" or isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "int" or isinstance(default, int):
            return int(text)
        if kind == "float" or isinstance(default, float):
            return float(text)
        if kind.startswith("list") or kind.endswith("| None"):
            return json.loads(text)
        return text
    except (ValueError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse --set {field_name}={text!r}: {e}") from e


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    """New config with string-valued CLI overrides applied over cfg."""
    _check_keys(overrides, "command-line overrides")
    values = cfg.to_dict()
    for key, text in overrides.items():
        values[key] = _coerce(key, text) if isinstance(text, str) else text
    return TrainConfig(**values)
