"""Experiment configuration: INI-style ``key = value`` files with sections.

Example::

    [data]
    train = data/coat/train.tsv
    valid = data/coat/valid.tsv
    test = data/coat/test.tsv

    [model]
    dim = 256
    layers = 2
    mode = dpaa

    [plan]
    C = 1e-4
    eta = 2.0
    delta = 0.2
    gamma = 1

    [train]
    learning_rate = 1e-3
    batch_size = 2048
    max_epochs = 1000
    patience = 50
    reg = 1e-4
    eval_k = 20
    seed = 0
    seeds = 1

    [grid]
    C = 0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0
    eta = 0, 1, 2, 3
    delta = 0.0, 0.2, 0.4, 0.6, 0.8, 1.0

    [sweep]
    severities = 0, 3, 6, 9
    sample_fraction = 0.2

    [output]
    dir = runs/coat
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig
from .weights import WeightPlan

DEFAULT_C_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)
DEFAULT_ETA_GRID = (0.0, 1.0, 2.0, 3.0)
DEFAULT_DELTA_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

# key -> (section, converter)
_KEYS = {
    "data.train": str, "data.valid": str, "data.test": str, "data.candidates": str,
    "data.dir": str, "data.pool": str, "data.coat_dir": str,
    "data.num_users": int, "data.num_items": int,
    "model.dim": int, "model.layers": int, "model.mode": str,
    "plan.C": float, "plan.eta": float, "plan.delta": float, "plan.gamma": int,
    "train.learning_rate": float, "train.batch_size": int, "train.max_epochs": int,
    "train.patience": int, "train.reg": float, "train.eval_k": int, "train.seed": int,
    "train.seeds": int,
    "grid.C": "floats", "grid.eta": "floats", "grid.delta": "floats",
    "sweep.severities": "floats", "sweep.sample_fraction": float, "sweep.split_seed": int,
    "sweep.synthetic_users": int, "sweep.synthetic_items": int,
    "cache.path": str, "output.dir": str, "output.workers": int,
}


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _convert(key: str, value):
    conv = _KEYS.get(key)
    if conv is None:
        raise ConfigError(f"unknown configuration key {key!r}")
    if value is None or isinstance(value, (tuple, list)):
        return tuple(value) if isinstance(value, list) else value
    if conv == "floats":
        return _floats(str(value))
    try:
        return conv(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot convert {value!r}") from None


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def set(self, key: str, value) -> None:
        self.values[key] = _convert(key, value)

    def update(self, overrides: dict) -> None:
        for k, v in overrides.items():
            if v is not None:
                self.set(k, v)

    # typed views -------------------------------------------------------------
    def plan(self) -> WeightPlan:
        return WeightPlan(C=self.get("plan.C", 1e-4), eta=self.get("plan.eta", 2.0),
                          gamma=self.get("plan.gamma", 1), delta=self.get("plan.delta", 0.2),
                          num_layers=self.get("model.layers", 2))

    def model(self, mode: str | None = None, plan: WeightPlan | None = None) -> ModelConfig:
        return ModelConfig(dim=self.get("model.dim", 256), num_layers=self.get("model.layers", 2),
                           plan=plan or self.plan(), mode=mode or self.get("model.mode", "dpaa"))

    def train(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.get("train.learning_rate", 1e-3),
            batch_size=self.get("train.batch_size", 2048),
            max_epochs=self.get("train.max_epochs", 1000),
            patience=self.get("train.patience", 50),
            reg=self.get("train.reg", 1e-4),
            eval_k=self.get("train.eval_k", 20),
            seed=self.get("train.seed", 0) if seed is None else seed,
        )

    def seeds(self) -> list[int]:
        base = self.get("train.seed", 0)
        return [base + k for k in range(self.get("train.seeds", 1))]

    def grids(self):
        return (self.get("grid.C", DEFAULT_C_GRID), self.get("grid.eta", DEFAULT_ETA_GRID),
                self.get("grid.delta", DEFAULT_DELTA_GRID))

    def output_dir(self) -> Path:
        return Path(self.get("output.dir", "runs/default"))

    def as_dict(self) -> dict:
        resolved = dict(sorted(self.values.items()))
        resolved["resolved.model"] = _jsonable(asdict(self.model()))
        resolved["resolved.train"] = asdict(self.train())
        resolved["resolved.seeds"] = self.seeds()
        return resolved


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items() if not k.startswith("normalized")}
    return d


def load_config(path=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"missing config file: {p}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep "C" distinct from "c"
    try:
        parser.read(p, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{p}: {exc}") from None
    base = p.parent
    for section in parser.sections():
        for key, value in parser.items(section):
            full = f"{section}.{key}"
            if full in ("data.train", "data.valid", "data.test", "data.candidates",
                        "data.dir", "data.pool", "data.coat_dir", "cache.path",
                        "output.dir") and not Path(value).is_absolute():
                value = str(base / value)
            cfg.set(full, value)
    return cfg
