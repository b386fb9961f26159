"""Pipeline configuration: per-dataset defaults, YAML loading with key validation."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Mapping

import yaml

from .completion import TrainConfig
from .events import CubeConfig
from .roi import MODES, RoiConfig
from .scoring import EnsembleConfig


class ConfigError(ValueError):
    pass


BASE: dict[str, Any] = {
    "dataset": {"name": "custom", "train_manifest": None, "test_manifest": None},
    "roi": {"score_thr": 0.5, "area_thr": 100, "overlap_thr": 0.6, "grad_thr": 18,
            "max_aspect": 10, "mode": "both"},
    "cube": {"height": 32, "width": 32, "depth": 5},
    "model": {"widths": [64, 128, 256, 512]},
    "train": {"epochs": 5, "batch_size": 128, "learning_rate": 1e-3, "seed": 0,
              "max_steps": None, "reduction": "mean", "device": "cpu"},
    "ensemble": {"preset": "vec-am", "w_a": 0.5, "w_m": 1.0,
                 "appearance_types": None, "motion_types": None},
    "backend": {"detections": None, "flow_cache": None, "flow_fallback": True},
    "output": {"dir": "runs/default"},
}

# Thresholds, schedule and fusion weights used for the three standard benchmarks.
DATASET_DEFAULTS: dict[str, dict[str, Any]] = {
    "ucsdped2": {
        "roi": {"score_thr": 0.5, "area_thr": 10 * 10, "overlap_thr": 0.6, "grad_thr": 18},
        "train": {"epochs": 5},
        "ensemble": {"w_a": 0.5, "w_m": 1.0},
    },
    "avenue": {
        "roi": {"score_thr": 0.25, "area_thr": 40 * 40, "overlap_thr": 0.6, "grad_thr": 18},
        "train": {"epochs": 20},
        "ensemble": {"w_a": 1.0, "w_m": 1.0},
    },
    "shanghaitech": {
        "roi": {"score_thr": 0.5, "area_thr": 8 * 8, "overlap_thr": 0.65, "grad_thr": 15},
        "train": {"epochs": 30},
        "ensemble": {"w_a": 1.0, "w_m": 0.5},
    },
}


def _merge(base: dict, update: Mapping, where: str = "") -> dict:
    for key, value in update.items():
        path = f"{where}.{key}" if where else str(key)
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {path!r} must be a mapping")
            _merge(base[key], value, path)
        else:
            base[key] = value
    return base


class PipelineConfig:
    """Resolved configuration. ``raw`` holds the nested dict that gets echoed to disk."""

    def __init__(self, raw: dict, base_dir: Path | None = None):
        self.raw = raw
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        try:
            self.roi = RoiConfig(**{k: v for k, v in raw["roi"].items() if k != "mode"})
            self.mode = raw["roi"]["mode"]
            if self.mode not in MODES:
                raise ConfigError(f"roi.mode must be one of {MODES}, got {self.mode!r}")
            self.cube = CubeConfig(**raw["cube"])
            self.train = TrainConfig(**raw["train"])
            ens = raw["ensemble"]
            self.ensemble = EnsembleConfig.from_preset(
                ens["preset"], self.cube.depth, float(ens["w_a"]), float(ens["w_m"]),
                ens["appearance_types"], ens["motion_types"],
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        self.widths = tuple(int(w) for w in raw["model"]["widths"])

    @property
    def dataset_name(self) -> str:
        return str(self.raw["dataset"]["name"])

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.path(self.raw["output"]["dir"])

    def manifest_path(self, split: str) -> Path:
        value = self.raw["dataset"].get(f"{split}_manifest")
        if not value:
            raise ConfigError(f"dataset.{split}_manifest is not set")
        p = self.path(value)
        if not p.exists():
            raise ConfigError(f"dataset.{split}_manifest: {p} does not exist")
        return p

    @property
    def uses_flow(self) -> bool:
        return self.ensemble.w_m > 0

    def dump(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=False)


def build_config(user: Mapping | None = None, dataset: str | None = None,
                 overrides: Mapping | None = None, base_dir: Path | None = None) -> PipelineConfig:
    """BASE, then per-dataset defaults, then the user file, then CLI overrides."""
    raw = copy.deepcopy(BASE)
    user = dict(user or {})
    name = dataset or (user.get("dataset") or {}).get("name")
    if name:
        key = str(name).lower()
        if key in DATASET_DEFAULTS:
            _merge(raw, DATASET_DEFAULTS[key])
        raw["dataset"]["name"] = str(name)
    _merge(raw, user)
    if dataset:
        raw["dataset"]["name"] = dataset
    if overrides:
        _merge(raw, overrides)
    return PipelineConfig(raw, base_dir)


def load_config(path: str | Path | None, dataset: str | None = None,
                overrides: Mapping | None = None) -> PipelineConfig:
    user, base_dir = {}, Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            user = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path} must contain a mapping")
        base_dir = path.parent
    return build_config(user, dataset, overrides, base_dir)
