"""Run configuration: one JSON file holding every hyperparameter.

Missing keys fall back to the defaults below; unknown keys are rejected so a
typo cannot silently run the wrong experiment.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

DEFAULTS: dict = {
    "data": {
        "samples": 30000,
        "seed": 7,
        "p_max_w": 115.0,
        "w_max_hz": None,
        "beta0": 1e-6,
        "beta1": 1e-2,
        "beta2": 1e-10,
        "min_support": 0.005,
        "percentile": 99.0,
        "feature_ds": [32, 3],
        "store_grids": False,
    },
    "encoder": {
        "kind": "tem",
        "T": 8,
        "alpha_u": 0.25,
        "alpha_v": 0.25,
        "threshold": 1.0,
        "replicas": 1,
    },
    "snn": {
        "ds": 32,
        "hidden": [512, 256, 512],
        "tau_syn": 2.0,
        "tau_mem": 4.0,
        "threshold": 1.0,
        "surrogate_width": 1.0,
        "init_gain": 1.0,
        "rho": 0.5,
        "rho_f": 0.01,
        "epochs": 15,
        "batch_size": 32,
        "lr": 1e-3,
        "seed": 0,
        "detach_reset": False,
    },
    "cnn": {
        "ds": 3,
        "conv_filters": [8, 4],
        "dense": [512, 256],
        "lr": 0.01,
        "momentum": 0.9,
        "nesterov": True,
        "epochs": 25,
        "batch_size": 128,
        "loss": "cross_entropy",
        "patience": 5,
        "standardize": True,
        "seed": 0,
    },
}


class ConfigError(ValueError):
    pass


def merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be a table")
            out[k] = merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        cfg = merge(cfg, user)
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg
