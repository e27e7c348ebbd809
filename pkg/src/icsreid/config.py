"""Run configuration: one JSON document drives every subcommand.

Unknown keys are rejected and every violation is reported at once, so a
config problem never surfaces halfway through a run.  The full config is
echoed into reports for provenance.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .dataset import GeneratorConfig
from .losses import QuintupletConfig
from .model import OptimizerConfig
from .sampler import PKConfig


class ConfigError(ValueError):
    """One or more configuration violations; the message lists all of them."""


@dataclass(frozen=True)
class ModelSettings:
    hidden_dim: int = 64
    embed_dim: int = 32


@dataclass(frozen=True)
class MemorySettings:
    update_rate: float = 0.5
    temperature: float = 0.067


@dataclass(frozen=True)
class LossSettings:
    instance_margin: float = 0.3
    centroid_margin: float = 0.3
    triplet_margin: float = 0.3
    smoothing_epsilon: float = 0.1


@dataclass(frozen=True)
class StageSettings:
    intra_epochs: int = 30
    inter_epochs: int = 40
    intra_reference_epochs: int = 50
    inter_reference_epochs: int = 120


@dataclass(frozen=True)
class AssociationSettings:
    pair_budget: int | str = "auto"  # "auto" = accumulated identity count


@dataclass(frozen=True)
class RunConfig:
    seed: int = 5
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    model: ModelSettings = field(default_factory=ModelSettings)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    memory: MemorySettings = field(default_factory=MemorySettings)
    losses: LossSettings = field(default_factory=LossSettings)
    sampler: PKConfig = field(default_factory=PKConfig)
    stages: StageSettings = field(default_factory=StageSettings)
    association: AssociationSettings = field(default_factory=AssociationSettings)

    def quintuplet(self) -> QuintupletConfig:
        return QuintupletConfig(instance_margin=self.losses.instance_margin,
                                centroid_margin=self.losses.centroid_margin)


_SECTIONS = {
    "generator": GeneratorConfig,
    "model": ModelSettings,
    "optimizer": OptimizerConfig,
    "memory": MemorySettings,
    "losses": LossSettings,
    "sampler": PKConfig,
    "stages": StageSettings,
    "association": AssociationSettings,
}


def default_config() -> RunConfig:
    return RunConfig()


def _coerce(section: str, cls, data: dict, problems: list[str]):
    known = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            problems.append(f"{section}: unknown key {key!r} "
                            f"(known: {', '.join(sorted(known))})")
            continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{section}: {exc}")
        return cls()


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    problems: list[str] = []
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                problems.append(f"seed: expected an integer, got {value!r}")
            else:
                kwargs["seed"] = value
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"{key}: expected an object, got {type(value).__name__}")
            else:
                kwargs[key] = _coerce(key, _SECTIONS[key], value, problems)
        else:
            problems.append(f"unknown top-level key {key!r} "
                            f"(known: seed, {', '.join(sorted(_SECTIONS))})")
    cfg = RunConfig(**kwargs)
    problems.extend(_validate(cfg))
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return cfg


def _validate(cfg: RunConfig) -> list[str]:
    problems = []
    try:
        cfg.generator.validate()
    except ValueError as exc:
        problems.append(str(exc))
    if cfg.model.hidden_dim <= 0 or cfg.model.embed_dim <= 0:
        problems.append("model: dimensions must be positive")
    if cfg.optimizer.learning_rate <= 0:
        problems.append("optimizer: learning_rate must be positive")
    if cfg.optimizer.weight_decay < 0:
        problems.append("optimizer: weight_decay must be >= 0")
    if not 0.0 <= cfg.memory.update_rate <= 1.0:
        problems.append("memory: update_rate must be in [0, 1]")
    if cfg.memory.temperature <= 0:
        problems.append("memory: temperature must be positive")
    if any(m < 0 for m in (cfg.losses.instance_margin, cfg.losses.centroid_margin,
                           cfg.losses.triplet_margin)):
        problems.append("losses: margins must be >= 0")
    if not 0.0 <= cfg.losses.smoothing_epsilon < 1.0:
        problems.append("losses: smoothing_epsilon must be in [0, 1)")
    if cfg.stages.intra_epochs < 0 or cfg.stages.inter_epochs < 0:
        problems.append("stages: epoch budgets must be >= 0")
    if cfg.stages.intra_reference_epochs <= 0 or cfg.stages.inter_reference_epochs <= 0:
        problems.append("stages: reference epoch budgets must be positive")
    budget = cfg.association.pair_budget
    if not (budget == "auto" or (isinstance(budget, int) and budget >= 1)):
        problems.append('association: pair_budget must be "auto" or an integer >= 1')
    return problems


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return config_from_dict(data)


def config_echo(cfg: RunConfig) -> dict:
    """Plain dict form of the config, embedded into reports."""
    return dataclasses.asdict(cfg)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Config with the master seed (and the generator seed) overridden."""
    return dataclasses.replace(
        cfg, seed=seed,
        generator=dataclasses.replace(cfg.generator, seed=seed),
    )
