"""Run configuration: one declarative YAML/JSON file plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from logdp.artifacts import fingerprint
from logdp.evaluation import SyntheticSpec
from logdp.ingest import ParserConfig
from logdp.models import Hyperparameters
from logdp.sequencer import WindowSpec

# Execution details that must not change artifact bytes.
_NOT_FINGERPRINTED = ("jobs", "output_dir")


@dataclass
class BlanketConfig:
    alpha: float = 0.05
    max_cond: int = 8
    rule: str = "AND"


@dataclass
class RunConfig:
    dataset: str = "generic"
    parser: ParserConfig = field(default_factory=ParserConfig)
    window: WindowSpec = field(default_factory=WindowSpec)
    log_path: Optional[str] = None
    session_labels: Optional[str] = None
    # leading share of sequences used for training; the rest becomes the test matrix
    train_fraction: float = 1.0
    # drop labeled-anomalous sequences from the training share instead of aborting
    drop_anomalous: bool = False
    split_ratio: float = 2 / 3
    blankets: BlanketConfig = field(default_factory=BlanketConfig)
    mlp: Hyperparameters = field(default_factory=Hyperparameters)
    margin: float = 1.0
    seed: int = 0
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    jobs: int = 1
    output_dir: str = "logdp-out"

    def __post_init__(self):
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")
        if self.margin < 1.0:
            raise ValueError("margin must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["parser"] = self.parser.to_dict()
        d["synthetic"] = self.synthetic.to_dict()
        return d

    @property
    def fingerprint(self) -> str:
        d = self.to_dict()
        for key in _NOT_FINGERPRINTED:
            d.pop(key)
        return fingerprint(d)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        data = dict(data or {})
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        dataset = data.get("dataset", "generic")
        data["parser"] = ParserConfig.preset(dataset, **_tuples(data.get("parser") or {}))
        data["window"] = WindowSpec(**(data.get("window") or {}))
        data["blankets"] = BlanketConfig(**(data.get("blankets") or {}))
        data["mlp"] = Hyperparameters(**(data.get("mlp") or {}))
        data["synthetic"] = SyntheticSpec.from_dict(data.get("synthetic") or {})
        return cls(**data)

    @classmethod
    def load(cls, path: Optional[Path | str]) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_dict(yaml.safe_load(path.read_text()) or {})

    def dump(self) -> str:
        return yaml.safe_dump(_plain(self.to_dict()), sort_keys=True)


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def apply_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Return a copy with dotted keys (``mlp.epochs``, ``seed``) replaced; None values are ignored."""
    data = _plain(config.to_dict())
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    # the parser section is already resolved against the preset
    return RunConfig.from_dict(data)
