"""Run configuration: a versioned JSON tree, validated before any work starts."""
from __future__ import annotations

import copy
import json
import os

from .experiment import PipelineConfig
from .som import ANGLE_WEIGHT, SomConfig
from .ssgan import MODEL_TYPES, ConfigError, TrainConfig
from .synth import DEFAULT_FAMILIES, SplitCounts, default_scene

SCHEMA_VERSION = 1


DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "trials": 20,
    "jobs": 1,
    "out": "runs",
    "model_types": list(MODEL_TYPES),
    "synth": {
        "bands": 32,
        "classes": 2,
        "families": list(DEFAULT_FAMILIES),
        "labeled_per_class": 10,
        "labeled_outliers": 10,
        "unlabeled_per_class": 500,
        "unlabeled_outliers": 3500,
        "test_per_class": 250,
        "test_per_family": 125,
    },
    "som": {
        "rows": 3,
        "cols": 3,
        "epochs": 40,
        "lr_start": 0.5,
        "lr_end": 0.01,
        "sigma_start": None,
        "sigma_end": 0.5,
        "ridge_scale": 1.0,
        "angle_weight": ANGLE_WEIGHT,
    },
    "membership": {"lr": 0.05, "epochs": 500},
    "ssgan": {
        "epochs": 20,
        "supervised_epochs": 300,
        "steps_per_epoch": None,
        "batch_size": 64,
        "noise_dim": 50,
        "gen_hidden": [256, 256],
        "spec_widths": [256, 128],
        "som_widths": [256, 128],
        "lr": 2e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "slope": 0.2,
        "init_std": 0.05,
    },
    "eval": {"grid_points": 201, "confidence": 0.95, "max_fa": 0.05, "reject_q": 0.9},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


class RunConfig:
    """Validated configuration tree with typed views for each pipeline stage."""

    def __init__(self, tree: dict | None = None):
        tree = _merge(DEFAULTS, tree or {})
        if tree["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {tree['schema_version']!r}")
        self.tree = tree
        self._validate()

    @classmethod
    def load(cls, path: str | os.PathLike | None, **overrides) -> "RunConfig":
        tree = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    tree = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e})") from None
            if not isinstance(tree, dict):
                raise ConfigError(f"{path}: top level must be an object")
        tree = _merge(DEFAULTS, tree)
        for k, v in overrides.items():
            if v is not None:
                tree[k] = v
        return cls(tree)

    def _validate(self):
        t = self.tree
        for k in ("seed", "trials", "jobs"):
            if not isinstance(t[k], int) or isinstance(t[k], bool) or t[k] < 0:
                raise ConfigError(f"{k} must be a non-negative integer")
        if t["trials"] < 1 or t["jobs"] < 1:
            raise ConfigError("trials and jobs must be at least 1")
        bad = [m for m in t["model_types"] if m not in MODEL_TYPES]
        if bad or not t["model_types"]:
            raise ConfigError(f"model types must be drawn from {list(MODEL_TYPES)}, got {t['model_types']}")
        try:
            self.scene
            self.counts
            self.pipeline
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        ev = t["eval"]
        if not 0 < ev["confidence"] < 1 or not 0 < ev["reject_q"] <= 1 or ev["grid_points"] < 2:
            raise ConfigError("eval settings out of range")

    # typed views -----------------------------------------------------------
    @property
    def seed(self) -> int:
        return self.tree["seed"]

    @property
    def trials(self) -> int:
        return self.tree["trials"]

    @property
    def jobs(self) -> int:
        return self.tree["jobs"]

    @property
    def out(self) -> str:
        return self.tree["out"]

    @property
    def model_types(self) -> list:
        return list(self.tree["model_types"])

    @property
    def scene(self):
        s = self.tree["synth"]
        return default_scene(s["bands"], s["classes"], tuple(s["families"]))

    @property
    def counts(self) -> SplitCounts:
        s = self.tree["synth"]
        return SplitCounts(**{k: s[k] for k in SplitCounts.__dataclass_fields__})

    @property
    def pipeline(self) -> PipelineConfig:
        s, m, g = self.tree["som"], self.tree["membership"], self.tree["ssgan"]
        som = SomConfig(s["epochs"], s["lr_start"], s["lr_end"], s["sigma_start"], s["sigma_end"])
        train = TrainConfig(**{k: v for k, v in g.items() if k != "supervised_epochs"})
        return PipelineConfig((s["rows"], s["cols"]), som, s["ridge_scale"], s["angle_weight"],
                              m["lr"], m["epochs"], train, g["supervised_epochs"])

    def to_json(self) -> str:
        return json.dumps(self.tree, indent=2, sort_keys=True)
