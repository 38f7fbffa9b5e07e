"""Pipeline configuration: nested JSON sections, named presets and stage hashes.

A config is a plain dict with the sections ``dataset``, ``occlusion``,
``siamese``, ``decoder``, ``training`` and ``evaluation`` plus a top-level
``seed``. User files are merged over a preset; unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

from .dataset import DEFAULT_RULES, DatasetConfig, OcclusionRule
from .decoder import SsimParams
from .siamese import SiameseConfig

DESK: dict[str, Any] = {
    "seed": 0,
    "dataset": {
        "image_size": [32, 32, 3],
        "num_labels": 8,
        "num_images": 2000,
        "split_fraction": 0.95,
        "correlation_rules": [list(r) for r in DEFAULT_RULES],
        "rule_strength": 0.6,
    },
    "occlusion": {"min_fraction": 1 / 3, "max_fraction": 2 / 3, "fill_value": 0.0},
    "siamese": {"k": 8, "f": 4, "channels": [16, 32, 64], "temperature": 1.0},
    "decoder": {"a": 0.5, "ssim_window": 8, "channels": [64, 32, 16], "base_channels": 128},
    "training": {
        "batch_size": 32,
        "classifier": {"epochs": 20, "learning_rate": 2e-3, "occlusion_probability": 0.5,
                       "channels": [8, 16, 32]},
        "siamese": {"epochs": 50, "learning_rate": 2e-3},
        "decoder": {"epochs": 20, "learning_rate": 1e-3},
        "probe": {"epochs": 300, "learning_rate": 1e-4},
    },
    "evaluation": {"pair_triplets": 500, "edit_images": 100, "edit_scale": 1.0,
                   "num_reconstructions": 8, "num_triptychs": 8},
}

# A seconds-scale configuration for smoke tests of the plumbing; its models are not meant to be good.
TINY: dict[str, Any] = copy.deepcopy(DESK)
TINY["dataset"].update(image_size=[16, 16, 3], num_images=48, split_fraction=0.75)
TINY["siamese"].update(k=4, f=2, channels=[4, 4, 4])
TINY["decoder"].update(channels=[8, 8], base_channels=8)
TINY["training"].update(batch_size=8)
for _stage in ("classifier", "siamese", "decoder", "probe"):
    TINY["training"][_stage]["epochs"] = 1
TINY["training"]["classifier"]["channels"] = [4, 4, 4]
TINY["evaluation"].update(pair_triplets=20, edit_images=6, num_reconstructions=2, num_triptychs=2)

PRESETS = {"desk": DESK, "tiny": TINY}


class ConfigError(ValueError):
    pass


def merge(base: dict, override: dict, where: str = "") -> dict:
    """Recursive merge of ``override`` into a copy of ``base``; unknown keys raise."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = merge(base[key], value, path)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None, preset: str = "desk") -> dict:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        cfg = merge(cfg, user)
    validate(cfg)
    return cfg


def dataset_config(cfg: dict) -> DatasetConfig:
    d = cfg["dataset"]
    return DatasetConfig(tuple(d["image_size"]), d["num_labels"], d["num_images"],
                         d["split_fraction"], tuple(tuple(r) for r in d["correlation_rules"]),
                         d["rule_strength"], cfg["seed"])


def occlusion_rule(cfg: dict) -> OcclusionRule:
    o = cfg["occlusion"]
    return OcclusionRule(o["min_fraction"], o["max_fraction"], o["fill_value"])


def siamese_config(cfg: dict, num_labels: int | None = None) -> SiameseConfig:
    s = cfg["siamese"]
    return SiameseConfig(num_labels or cfg["dataset"]["num_labels"], s["k"], s["f"],
                         tuple(s["channels"]))


def ssim_params(cfg: dict) -> SsimParams:
    return SsimParams(window=cfg["decoder"]["ssim_window"])


def validate(cfg: dict) -> None:
    """Build every typed config once so bad values fail before any training starts."""
    try:
        ds = dataset_config(cfg)
        occlusion_rule(cfg)
        siamese_config(cfg).validate(ds.image_size)
        ssim_params(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if not 0 <= cfg["decoder"]["a"] <= 1:
        raise ConfigError("decoder.a must lie in [0, 1]")
    if cfg["training"]["batch_size"] < 1:
        raise ConfigError("training.batch_size must be positive")


# Each stage's artifact name hashes only the config sections it depends on.
STAGE_KEYS = {
    "data": [("seed",), ("dataset",)],
    "classifier": [("occlusion",), ("training", "batch_size"), ("training", "classifier")],
    "siamese": [("siamese",), ("training", "siamese")],
    "decoder": [("decoder",), ("training", "decoder")],
    "probe": [("training", "probe")],
}
STAGE_PARENT = {"data": None, "classifier": "data", "siamese": "classifier",
                "decoder": "siamese", "probe": "siamese"}


def _pick(cfg: dict, path: tuple) -> Any:
    for key in path:
        cfg = cfg[key]
    return cfg


def stage_payload(cfg: dict, stage: str) -> dict:
    parent = STAGE_PARENT[stage]
    payload = {".".join(p): _pick(cfg, p) for p in STAGE_KEYS[stage]}
    if parent is not None:
        payload["parent"] = stage_payload(cfg, parent)
    return payload


def stage_hash(cfg: dict, stage: str) -> str:
    blob = json.dumps(stage_payload(cfg, stage), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
