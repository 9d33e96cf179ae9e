"""Experiment configuration files (YAML).

One file fully determines a run::

    model:                    # inline model spec, or ``model_file: other.yaml``
      input_shape: [28, 28, 1]
      preset: small_cnn
      options: {variant: bwht}
    dataset:
      path: ../data/mnist5k   # relative paths resolve against this file
      format: idx
      train_subset: null
      seed: 0
    train:
      epochs: 5
      batch_size: 32
      lr: 0.003
    seed: 0                   # model initialization and shuffling
    threads: 1
    output_dir: runs/mnist_bwht
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import FORMATS, DataSplit, load_dataset
from .errors import ConfigError
from .nn.train import TrainConfig

_TOP_KEYS = {"model", "model_file", "dataset", "train", "seed", "threads", "output_dir", "name"}
_DATA_KEYS = {"path", "format", "train_subset", "test_subset", "seed", "synthetic"}


@dataclass
class DatasetConfig:
    format: str
    path: Path | None = None
    train_subset: int | None = None
    test_subset: int | None = None
    seed: int = 0
    synthetic: dict = field(default_factory=dict)

    def load(self) -> DataSplit:
        return load_dataset(self.path, self.format, self.train_subset, self.test_subset,
                            self.seed, **self.synthetic)


@dataclass
class ExperimentConfig:
    model: dict
    dataset: DatasetConfig | None
    train: TrainConfig
    seed: int = 0
    threads: int = 1
    output_dir: Path | None = None
    name: str = "run"
    source: Path | None = None

    def to_dict(self) -> dict:
        """Plain mapping echoed into checkpoints and summaries."""
        ds = None
        if self.dataset is not None:
            ds = {"format": self.dataset.format,
                  "path": None if self.dataset.path is None else str(self.dataset.path),
                  "train_subset": self.dataset.train_subset,
                  "test_subset": self.dataset.test_subset, "seed": self.dataset.seed,
                  "synthetic": self.dataset.synthetic}
        tr = dict(vars(self.train))
        return {"name": self.name, "model": self.model, "dataset": ds, "train": tr,
                "seed": self.seed, "threads": self.threads}


def _read_yaml(path: Path) -> dict:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({str(exc).splitlines()[0]})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _dataset(d, base: Path) -> DatasetConfig:
    if not isinstance(d, dict):
        raise ConfigError("dataset must be a mapping")
    unknown = set(d) - _DATA_KEYS
    if unknown:
        raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
    fmt = d.get("format")
    if fmt not in FORMATS:
        raise ConfigError(f"dataset format must be one of {FORMATS}, got {fmt!r}")
    path = None
    if fmt != "synthetic":
        if "path" not in d:
            raise ConfigError(f"{fmt} dataset needs a path")
        path = Path(d["path"])
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError(f"dataset path does not exist: {path}")
    return DatasetConfig(fmt, path, d.get("train_subset"), d.get("test_subset"),
                         int(d.get("seed", 0)), dict(d.get("synthetic") or {}))


def parse_config(doc: dict, base: Path = Path(".")) -> ExperimentConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "model_file" in doc:
        model = _read_yaml(base / doc["model_file"])
    elif "model" in doc:
        model = doc["model"]
    else:
        raise ConfigError("config needs model or model_file")
    if not isinstance(model, dict):
        raise ConfigError("model must be a mapping")
    dataset = _dataset(doc["dataset"], base) if doc.get("dataset") is not None else None
    train_doc = dict(doc.get("train") or {})
    seed = int(doc.get("seed", 0))
    train_doc.setdefault("seed", seed)
    try:
        train = TrainConfig.from_dict(train_doc)
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from None
    threads = int(doc.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    out = doc.get("output_dir")
    if out is not None:
        out = Path(out)
    return ExperimentConfig(model, dataset, train, seed, threads, out,
                            str(doc.get("name", "run")))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    cfg = parse_config(_read_yaml(path), path.parent)
    cfg.source = path
    return cfg
