"""Experiment configuration: one JSON file drives the whole pipeline.

Schema (every section and key is optional; unknown keys are rejected)::

    {
      "seed": 0,
      "out_dir": "runs/smoke",
      "world":      {"n_users", "n_items", "n_categories", "latent_dim", "noise_scale",
                     "quit_window", "quit_tolerance", "max_rounds"},
      "behavior":   {"kind", "temperature", "popularity_center", "popularity_width",
                     "popularity_strength", "diversity_window", "events_per_user"},
      "user_model": {"d", "K", "learning_rate", "l2_reg", "epochs", "batch_size",
                     "ips_clip", "init_scale"},
      "penalty":    {"lambda1", "lambda2", "orders"},
      "agent":      {"lr_actor", "lr_critic", "gamma", "entropy_coef", "rollout_len",
                     "episodes_per_epoch", "epochs", "batch_episodes", "state_window",
                     "emb_dim", "epsilon"},
      "eval":       {"n_episodes", "coverage", "sweep", "marginalize"}
    }

``eval.sweep`` maps any of ``lambda1``, ``lambda2``, ``quit_window`` to a
list of values. Stage seeds are ``seed + STAGE_OFFSETS[stage]``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .agent import ACHyper, StateTrackerConfig
from .data import BehaviorPolicyConfig
from .env import QuitRule
from .penalty import PenaltyConfig
from .user_model import TrainConfig

STAGE_OFFSETS = {"world": 0, "logs": 1, "user_model": 2, "policy": 3, "eval": 4}
SWEEP_KEYS = ("lambda1", "lambda2", "quit_window")


class ConfigError(ValueError):
    """Schema violation; the message starts with the offending key path."""


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 50
    n_items: int = 200
    n_categories: int = 8
    latent_dim: int = 4
    noise_scale: float = 0.0
    quit_window: int = 4
    quit_tolerance: int = 0
    max_rounds: int = 30

    def __post_init__(self):
        if min(self.n_users, self.n_items, self.n_categories, self.latent_dim) < 1:
            raise ValueError("sizes must be >= 1")
        if self.n_categories > self.n_items:
            raise ValueError("n_categories must not exceed n_items")
        if not 0 <= self.noise_scale < 0.5:
            raise ValueError("noise_scale must lie in [0, 0.5)")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        self.quit_rule  # validates window/tolerance

    @property
    def quit_rule(self) -> QuitRule:
        return QuitRule(self.quit_window, self.quit_tolerance)


@dataclass(frozen=True)
class BehaviorConfig:
    kind: str = "popularity_softmax"
    temperature: float = 1.0
    popularity_center: float = 0.0
    popularity_width: float = 10.0
    popularity_strength: float = 1.0
    diversity_window: int = 0
    events_per_user: int = 100

    def __post_init__(self):
        if self.events_per_user < 1:
            raise ValueError("events_per_user must be >= 1")
        self.policy  # validates the remaining fields

    @property
    def policy(self) -> BehaviorPolicyConfig:
        return BehaviorPolicyConfig(self.kind, self.temperature, self.popularity_center,
                                    self.popularity_width, self.popularity_strength,
                                    self.diversity_window)


@dataclass(frozen=True)
class UserModelConfig:
    d: int = 8
    K: int = 5
    learning_rate: float = 0.01
    l2_reg: float = 1e-4
    epochs: int = 20
    batch_size: int = 256
    ips_clip: tuple[float, float] = (0.1, 10.0)
    init_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "ips_clip", tuple(float(x) for x in self.ips_clip))
        self.train_config(0, ips=False)

    def train_config(self, seed: int, ips: bool) -> TrainConfig:
        return TrainConfig(self.d, self.K, self.learning_rate, self.l2_reg, self.epochs,
                           self.batch_size, ips, self.ips_clip, seed, self.init_scale)


@dataclass(frozen=True)
class PenaltySection:
    lambda1: float = 0.05
    lambda2: float = 5.0
    orders: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        object.__setattr__(self, "orders", tuple(int(k) for k in self.orders))
        if not self.orders or min(self.orders) < 1:
            raise ValueError("orders must be a non-empty list of positive integers")
        self.penalty

    @property
    def penalty(self) -> PenaltyConfig:
        return PenaltyConfig(self.lambda1, self.lambda2, self.orders)


@dataclass(frozen=True)
class AgentConfig:
    lr_actor: float = 3e-3
    lr_critic: float = 3e-3
    gamma: float = 0.9
    entropy_coef: float = 0.01
    rollout_len: int = 30
    episodes_per_epoch: int = 256
    epochs: int = 20
    batch_episodes: int = 32
    state_window: int = 10
    emb_dim: int = 32
    epsilon: float = 0.1

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        self.hyper(0)
        self.tracker

    def hyper(self, seed: int) -> ACHyper:
        return ACHyper(self.lr_actor, self.lr_critic, self.gamma, self.entropy_coef,
                       self.rollout_len, self.episodes_per_epoch, self.epochs,
                       self.batch_episodes, seed)

    @property
    def tracker(self) -> StateTrackerConfig:
        return StateTrackerConfig(self.state_window, self.emb_dim)


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 100
    coverage: float = 0.8
    sweep: dict = field(default_factory=dict)
    marginalize: str | None = None

    def __post_init__(self):
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if not 0 < self.coverage <= 1:
            raise ValueError("coverage must lie in (0, 1]")
        for k, v in self.sweep.items():
            if k not in SWEEP_KEYS:
                raise ValueError(f"unknown sweep parameter {k!r}; expected one of {SWEEP_KEYS}")
            if not isinstance(v, list) or not v:
                raise ValueError(f"sweep values for {k!r} must be a non-empty list")
        if self.marginalize is not None and self.marginalize not in self.sweep:
            raise ValueError("marginalize must name a swept parameter")


SECTIONS = {"world": WorldConfig, "behavior": BehaviorConfig, "user_model": UserModelConfig,
            "penalty": PenaltySection, "agent": AgentConfig, "eval": EvalConfig}


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = WorldConfig()
    behavior: BehaviorConfig = BehaviorConfig()
    user_model: UserModelConfig = UserModelConfig()
    penalty: PenaltySection = PenaltySection()
    agent: AgentConfig = AgentConfig()
    eval: EvalConfig = EvalConfig()
    out_dir: str = "runs/default"
    seed: int = 0

    def stage_seed(self, stage: str) -> int:
        return self.seed + STAGE_OFFSETS[stage]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["user_model"]["ips_clip"] = list(self.user_model.ips_clip)
        d["penalty"]["orders"] = list(self.penalty.orders)
        return d

    def config_hash(self) -> str:
        """SHA-256 prefix of the canonical config, ignoring ``out_dir`` so
        that relocating a run does not change its identity."""
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object, got {type(raw).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for k in raw:
        if k not in names:
            raise ConfigError(f"{path}.{k}: unknown key")
    kwargs = {}
    for k, v in raw.items():
        default = names[k].default
        if isinstance(default, bool) or default is None:
            pass
        elif isinstance(default, int) and not (isinstance(v, int) and not isinstance(v, bool)):
            raise ConfigError(f"{path}.{k}: expected an integer, got {v!r}")
        elif isinstance(default, float) and not (isinstance(v, (int, float))
                                                 and not isinstance(v, bool)):
            raise ConfigError(f"{path}.{k}: expected a number, got {v!r}")
        elif isinstance(default, str) and not isinstance(v, str):
            raise ConfigError(f"{path}.{k}: expected a string, got {v!r}")
        elif isinstance(default, tuple) and not isinstance(v, list):
            raise ConfigError(f"{path}.{k}: expected a list, got {v!r}")
        kwargs[k] = float(v) if isinstance(default, float) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object at top level")
    allowed = set(SECTIONS) | {"out_dir", "seed"}
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"config.{k}: unknown key")
    kwargs: dict[str, Any] = {}
    for name, cls in SECTIONS.items():
        if name in raw:
            kwargs[name] = _build(cls, raw[name], f"config.{name}")
    if "seed" in raw:
        if not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool) or raw["seed"] < 0:
            raise ConfigError("config.seed: expected a non-negative integer")
        kwargs["seed"] = raw["seed"]
    if "out_dir" in raw:
        if not isinstance(raw["out_dir"], str):
            raise ConfigError("config.out_dir: expected a string")
        kwargs["out_dir"] = raw["out_dir"]
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config: invalid JSON ({e})") from None
    return config_from_dict(raw)
