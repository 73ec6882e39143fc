"""Run configuration: one JSON file, strict keys, flags override."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .data import SyntheticSpec
from .fitness import EarlyStop, TrainerSpec, TrainingConfig
from .sge import EvolutionConfig, MappingLimits


class ConfigError(ValueError):
    pass


@dataclass
class TrainingSection:
    batch_size: int = 1000
    scale_batch: bool = True
    patience: int = 3
    initial_prev_lr: float = 0.01
    augmentation: Optional[dict] = None


@dataclass
class CompareSection:
    runs: int = 5
    scenarios: list = field(default_factory=lambda: ["S3"])


@dataclass
class RunConfig:
    grammar: str = "builtin:autolr"
    scenario: object = "S1"
    seed: int = 0
    jobs: Optional[int] = None
    out: str = "lrsge-out"
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    trainer: TrainerSpec = field(default_factory=TrainerSpec)
    training: TrainingSection = field(default_factory=TrainingSection)
    compare: CompareSection = field(default_factory=CompareSection)
    source_path: Optional[str] = field(default=None, metadata={"internal": True})

    def base_training(self, train_seed: int = 0) -> TrainingConfig:
        t = self.training
        return TrainingConfig(batch_size=t.batch_size, scale_batch=t.scale_batch,
                              early_stop=EarlyStop(t.patience), train_seed=train_seed,
                              initial_prev_lr=t.initial_prev_lr, augmentation=t.augmentation)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("source_path")
        d["evolution"].pop("rng_seed")
        return d


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_NESTED = {
    ("evolution", "limits"): MappingLimits,
    ("trainer", "dataset"): SyntheticSpec,
}
_SECTIONS = {
    "evolution": EvolutionConfig,
    "trainer": TrainerSpec,
    "training": TrainingSection,
    "compare": CompareSection,
}


def config_from_dict(data: dict, base_dir: str = ".") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    for name, cls in _SECTIONS.items():
        if name in data:
            section = dict(data[name]) if isinstance(data[name], dict) else data[name]
            if isinstance(section, dict):
                if name == "evolution" and "rng_seed" in section:
                    raise ConfigError("evolution: unknown key(s) rng_seed (use top-level 'seed')")
                for (sec, key), sub in _NESTED.items():
                    if sec == name and key in section:
                        section[key] = _strict(sub, section[key], f"{name}.{key}")
            data[name] = _strict(cls, section, name)
    cfg = _strict(RunConfig, data, "config")
    if cfg.grammar != "builtin:autolr":
        path = cfg.grammar if os.path.isabs(cfg.grammar) else os.path.join(base_dir, cfg.grammar)
        if not os.path.exists(path):
            raise ConfigError(f"grammar file not found: {cfg.grammar}")
        cfg.grammar = path
    cfg.evolution.rng_seed = cfg.seed
    return cfg


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return config_from_dict({})
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    cfg = config_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
    cfg.source_path = path
    return cfg
