"""Pipeline configuration file.

A JSON object with up to three optional sections; omitted keys keep their
defaults and unknown keys are rejected::

    {
      "reward": {"improvement": 1.0, "iteration_penalty": 0.1,
                 "convergence_bonus": 1.0, "stuck_penalty": 0.05},
      "router": {"base_cost": 1.0, "wrong_way_factor": 4.0, "via_cost": 2.0,
                 "tile_size": 8, "max_iterations": 64},
      "cql":    {"alpha": 0.8, "batch_size": 128, "max_epochs": 500, "min_epochs": 400}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .cql import CQLConfig
from .reward import RewardCoefficients
from .router import RouterConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    reward: RewardCoefficients = field(default_factory=RewardCoefficients)
    router: RouterConfig = field(default_factory=RouterConfig)
    cql: CQLConfig = field(default_factory=CQLConfig)


_SECTIONS = {"reward": RewardCoefficients, "router": RouterConfig, "cql": CQLConfig}


def _build(cls, section: str, values) -> object:
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    parts = {name: _build(cls, name, doc[name]) for name, cls in _SECTIONS.items() if name in doc}
    return PipelineConfig(**parts)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return config_from_dict(doc)
