"""JSON run configuration with strict key checking."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .evaluation import MatchConfig
from .heatmap import DecodeConfig, HeatmapConfig
from .network import NetworkConfig
from .training import LossWeights, OptimizerConfig

RUN_SCHEMA = 1


def _strict(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


@dataclass(frozen=True)
class Paths:
    data: Optional[str] = None
    out: Optional[str] = None
    vocabulary: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    paths: Paths = field(default_factory=Paths)
    schema_version: int = RUN_SCHEMA

    _SECTIONS = {
        "network": NetworkConfig, "optimizer": OptimizerConfig, "loss": LossWeights,
        "heatmap": HeatmapConfig, "decode": DecodeConfig, "match": MatchConfig, "paths": Paths,
    }

    def to_dict(self) -> dict:
        out = {"schema_version": self.schema_version}
        for name in self._SECTIONS:
            section = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValueError("run config must be a JSON object")
        unknown = set(data) - set(cls._SECTIONS) - {"schema_version"}
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        version = data.get("schema_version", RUN_SCHEMA)
        if version != RUN_SCHEMA:
            raise ValueError(f"run config schema_version {version} is not supported")
        sections = {name: _strict(kind, data[name], name)
                    for name, kind in cls._SECTIONS.items() if name in data}
        return cls(**sections, schema_version=version)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
