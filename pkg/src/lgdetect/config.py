"""Run configuration: JSON file validated against a closed schema."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}

TRAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "lr_backbone": _pos_num,
        "lr_head": _pos_num,
        "betas": {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}, "minItems": 2, "maxItems": 2},
        "weight_decay": {"type": "number", "minimum": 0},
        "clip_norm": _pos_num,
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": _pos_int,
        "seed_offset": {"type": "integer"},
    },
}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["branch", "data"],
    "properties": {
        "branch": {"enum": ["global", "local"]},
        "data": {"type": "string"},
        "train_res": _pos_int,
        "infer_res": _pos_int,
        "patch_size": _pos_int,
        "tta_flip": {"type": "boolean"},
        "loss": {"enum": ["focal", "ce", "ce_then_focal", "local_combo"]},
        "rho": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "features": _pos_int,
        "init": {
            "oneOf": [
                {"const": "fresh"},
                {"type": "object", "additionalProperties": False, "required": ["model"], "properties": {"model": {"type": "string"}}},
                {"type": "object", "additionalProperties": False, "required": ["checkpoint"], "properties": {"checkpoint": {"type": "string"}}},
            ]
        },
        "train": TRAIN_SCHEMA,
    },
}

DATASET_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family"],
    "properties": {
        "family": {"enum": ["local_texture", "global_stat", "mixed"]},
        "forged_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "counts": {
            "type": "object",
            "additionalProperties": False,
            "properties": {s: {"type": "integer", "minimum": 0} for s in ("train", "val", "test")},
        },
        "seed_offset": {"type": "integer"},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["models"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "image_size": _pos_int,
                "patch_size": _pos_int,
                "datasets": {"type": "object", "additionalProperties": DATASET_SCHEMA},
            },
        },
        "degradation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"policy": {"enum": ["none", "random"]}},
        },
        "models": {"type": "object", "minProperties": 1, "additionalProperties": MODEL_SCHEMA},
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "required": ["members"],
            "properties": {
                "members": {"type": "array", "items": {"type": "string"}, "minItems": 1, "uniqueItems": True},
                "weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "strategy": {"enum": ["logit", "probability", "majority"]},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dataset": {"type": "string"},
                "split": {"enum": ["train", "val", "test"]},
                "threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "sweep_images": _pos_int,
                "manifest": {"type": "string"},
            },
        },
        "ablation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sub_ensembles": {
                    "type": "object",
                    "minProperties": 1,
                    "additionalProperties": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                },
                "strategies": {"type": "array", "items": {"enum": ["logit", "probability", "majority"]}, "minItems": 1},
                "logits": {"type": "array", "items": {"type": "string"}},
                "labels": {"type": "string"},
            },
        },
    },
}

DEFAULT_TRAIN = {
    "lr_backbone": 1e-3,
    "lr_head": 1e-3,
    "betas": [0.9, 0.999],
    "weight_decay": 1e-2,
    "clip_norm": 1.0,
    "epochs": 10,
    "batch_size": 32,
    "seed_offset": 0,
}

DEFAULT_MODEL = {
    "train_res": 64,
    "infer_res": 64,
    "patch_size": 8,
    "tta_flip": False,
    "rho": 0.1,
    "features": 64,
    "init": "fresh",
}


class ConfigError(ValueError):
    pass


def validate(cfg: dict) -> dict:
    """Validate and fill defaults; returns a new dict."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("seed", 0)
    cfg.setdefault("out_dir", "runs")
    synth = cfg.setdefault("synth", {})
    synth.setdefault("image_size", 64)
    synth.setdefault("patch_size", 8)
    for ds in synth.setdefault("datasets", {}).values():
        ds.setdefault("forged_fraction", 0.08)
        ds.setdefault("counts", {"train": 2000, "val": 500, "test": 500})
        ds.setdefault("seed_offset", 0)
    cfg.setdefault("degradation", {}).setdefault("policy", "none")
    for mid, m in cfg["models"].items():
        for k, v in DEFAULT_MODEL.items():
            m.setdefault(k, v)
        m.setdefault("loss", "local_combo" if m["branch"] == "local" else "focal")
        m["train"] = {**DEFAULT_TRAIN, **m.get("train", {})}
        if m["data"] not in synth["datasets"]:
            raise ConfigError(f"model {mid!r} trains on unknown dataset {m['data']!r}")
        init = m["init"]
        if isinstance(init, dict) and "model" in init and init["model"] not in cfg["models"]:
            raise ConfigError(f"model {mid!r} initialises from unknown model {init['model']!r}")
    ens = cfg.get("ensemble")
    if ens:
        ens.setdefault("strategy", "logit")
        unknown = [m for m in ens["members"] if m not in cfg["models"]]
        if unknown:
            raise ConfigError(f"ensemble members {unknown} are not defined under models")
        if "weights" in ens and len(ens["weights"]) != len(ens["members"]):
            raise ConfigError("ensemble weights must match members one-to-one")
    ev = cfg.setdefault("eval", {})
    ev.setdefault("split", "test")
    ev.setdefault("threshold", 0.5)
    ev.setdefault("sweep_images", 500)
    if "dataset" in ev and ev["dataset"] not in synth["datasets"]:
        raise ConfigError(f"eval dataset {ev['dataset']!r} is not defined under synth.datasets")
    ab = cfg.get("ablation")
    if ab:
        ab.setdefault("strategies", ["majority", "probability", "logit"])
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return raw


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q
