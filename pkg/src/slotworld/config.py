"""Run configuration: one structured document covering every component.

Loaded from YAML with strict key checking (unknown keys are rejected so typos
fail loudly). Defaults are the production-model sizes; tests and smoke runs
override them downward.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from slotworld.autoencoder import AutoencoderConfig
from slotworld.backbone import BackboneConfig
from slotworld.blockworld import EnvConfig
from slotworld.dynamics import DynamicsConfig
from slotworld.heads import HeadConfig


@dataclass
class TrainConfig:
    # Imagination and return targets.
    horizon: int = 15
    seed_steps: int = 2              # ground-truth steps conditioning each rollout
    return_lambda: float = 0.95
    discount: float = 0.99
    entropy_coef: float = 3e-4
    # 0 means every valid seed length in the window starts a trajectory.
    imagination_starts: int = 0
    # Optimization.
    lr_dynamics: float = 1e-4
    lr_reward: float = 1e-4
    lr_actor: float = 3e-5
    lr_critic: float = 3e-5
    lr_autoencoder: float = 3e-5     # fine-tuning rate during RL
    lr_pretrain: float = 1e-4
    clip_autoencoder: float = 0.05
    clip_dynamics: float = 3.0
    clip_heads: float = 10.0
    warmup_steps: int = 2500
    critic_ema_decay: float = 0.98
    critic_ema_weight: float = 1.0
    return_norm_decay: float = 0.99
    freeze_autoencoder: bool = False
    # Data and loop budget.
    batch_size: int = 16
    replay_capacity: int = 500
    steps_per_update: int = 4        # environment steps per update pair
    total_env_steps: int = 150_000
    eval_every: int = 10_000
    eval_episodes: int = 20
    checkpoint_every: int = 25_000
    prefill_episodes: int = 5
    # Autoencoder pretraining on random-policy data.
    pretrain_frames: int = 10_000
    pretrain_steps: int = 10_000
    pretrain_batch: int = 16
    pretrain_clip_len: int = 4
    single_threaded: bool = True

    def __post_init__(self):
        if self.horizon < 1 or self.seed_steps < 1:
            raise ValueError("horizon and seed_steps must be positive")
        if not 0.0 <= self.return_lambda <= 1.0 or not 0.0 < self.discount <= 1.0:
            raise ValueError("return_lambda in [0,1] and discount in (0,1] required")

    @property
    def window(self) -> int:
        return self.seed_steps + self.horizon


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    env: EnvConfig = field(default_factory=EnvConfig)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        dims = {
            "autoencoder": self.autoencoder.slot_dim,
            "dynamics": self.dynamics.slot_dim,
            "backbone": self.backbone.slot_dim,
        }
        if len(set(dims.values())) != 1:
            raise ValueError(f"slot_dim mismatch across components: {dims}")
        if self.autoencoder.image_size != self.env.image_size:
            raise ValueError("autoencoder and environment disagree on image_size")
        if self.dynamics.action_dim != self.heads.action_dim:
            raise ValueError("dynamics and heads disagree on action_dim")
        longest = self.train.window + self.train.horizon
        if self.dynamics.max_steps < longest:
            raise ValueError(
                f"dynamics.max_steps={self.dynamics.max_steps} too short for "
                f"imagination histories up to {longest} steps"
            )


_SECTIONS = {
    "env": EnvConfig,
    "autoencoder": AutoencoderConfig,
    "dynamics": DynamicsConfig,
    "backbone": BackboneConfig,
    "heads": HeadConfig,
    "train": TrainConfig,
}


def _build_section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ValueError(f"config section '{path}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys in '{path}': {sorted(unknown)}")
    coerced = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in data.items()
    }
    return cls(**coerced)


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from nested plain dicts, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ValueError("run config must be a mapping")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(v) for key, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(config: RunConfig) -> dict:
    return _plain(dataclasses.asdict(config))


def load_config(path) -> RunConfig:
    with open(path) as handle:
        data = yaml.safe_load(handle) or {}
    try:
        return config_from_dict(data)
    except (TypeError, ValueError) as err:
        raise ValueError(f"invalid config {path}: {err}") from err


def save_config(config: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as handle:
        yaml.safe_dump(config_to_dict(config), handle, sort_keys=False)
