"""Experiment configuration: one YAML tree, defaults, and dotted overrides.

Every model section's defaults are the published training settings the
rest of the package is calibrated against.  Section seeds are never set
directly; they are derived from the single master seed so that two runs
with the same file and seed are identical everywhere.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .bicogan import BiCoGanConfig
from .d3qn import PolicyConfig
from .dppr import DpprConfig
from .reward import RewardConfig
from .synthworld import WorldConfig
from .seeding import derive_seed


class ConfigError(ValueError):
    """Anything wrong with the experiment configuration itself."""


@dataclass
class CfSection:
    n_databases: int = 100
    strategy: int = 2
    noise_mode: str = "abducted"
    trait_source: str = "counterfactual"
    replace: bool = True
    balance_keep: int | None = None     # None: train on every database
    seed: int = 0

    def __post_init__(self):
        if self.n_databases < 1:
            raise ValueError("cf.n_databases must be >= 1")
        if self.strategy not in (1, 2, 3):
            raise ValueError("cf.strategy must be 1, 2 or 3")
        if self.balance_keep is not None and self.balance_keep < 1:
            raise ValueError("cf.balance_keep must be >= 1 or omitted")


@dataclass
class EvaluateSection:
    cca_components: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.cca_components < 1:
            raise ValueError("evaluate.cca_components must be >= 1")


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_dialogues: int = 400
    split_ratio: float = 0.8
    outcome_cap: float = 20.0
    world: WorldConfig = field(default_factory=WorldConfig)
    dppr: DpprConfig = field(default_factory=DpprConfig)
    bicogan: BiCoGanConfig = field(default_factory=BiCoGanConfig)
    cf: CfSection = field(default_factory=CfSection)
    reward: RewardConfig = field(default_factory=RewardConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie strictly between 0 and 1")
        if self.n_dialogues < 2:
            raise ConfigError("n_dialogues must be >= 2 so both splits are non-empty")
        if self.outcome_cap <= 0:
            raise ConfigError("outcome_cap must be positive")

    def stage_seed(self, label: str) -> int:
        return derive_seed(self.seed, label)


_SECTIONS = {
    "world": WorldConfig,
    "dppr": DpprConfig,
    "bicogan": BiCoGanConfig,
    "cf": CfSection,
    "reward": RewardConfig,
    "policy": PolicyConfig,
    "evaluate": EvaluateSection,
}
_TOP_KEYS = ("seed", "n_dialogues", "split_ratio", "outcome_cap")


def _build_section(name: str, cls, values: dict):
    allowed = {f.name for f in fields(cls)}
    if "seed" in values:
        raise ConfigError(f"{name}.seed is derived from the master seed; "
                          "set 'seed' at the top level instead")
    for key in values:
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from None


def from_tree(tree: dict) -> ExperimentConfig:
    """Materialize a config from a parsed YAML tree; unknown keys are errors."""
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"config root must be a mapping, got {type(tree).__name__}")
    top = {}
    section_values = {}
    for key, value in tree.items():
        if key in _TOP_KEYS:
            top[key] = value
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key} must be a mapping")
            section_values[key] = value
        else:
            raise ConfigError(f"unknown key {key}")
    sections = {name: _build_section(name, cls, section_values.get(name, {}))
                for name, cls in _SECTIONS.items()}
    try:
        cfg = ExperimentConfig(**top, **sections)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return _derive_section_seeds(cfg)


def _derive_section_seeds(cfg: ExperimentConfig) -> ExperimentConfig:
    for name in _SECTIONS:
        section = getattr(cfg, name)
        setattr(cfg, name, dataclasses.replace(section, seed=cfg.stage_seed(name)))
    return cfg


def apply_overrides(tree: dict, overrides: list[str]) -> dict:
    """key.path=value pairs, values parsed as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        if not all(parts):
            raise ConfigError(f"override {item!r} has an empty key component")
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted} descends through a scalar")
        node[parts[-1]] = yaml.safe_load(raw)
    return tree


def load_config(path=None, seed: int | None = None,
                overrides: list[str] | None = None) -> ExperimentConfig:
    """Defaults, then the file, then dotted overrides, then the seed flag."""
    tree: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            tree = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
    if overrides:
        tree = apply_overrides(tree, overrides)
    if seed is not None:
        tree["seed"] = seed
    return from_tree(tree)


def to_tree(cfg: ExperimentConfig) -> dict:
    """Fully resolved config as plain data, suitable for provenance records."""
    return dataclasses.asdict(cfg)
