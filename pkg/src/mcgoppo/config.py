"""Run configuration: one YAML file, key=value overrides, mode resolution.

A run is described by a flat mapping.  `make_run_config` resolves the
algorithm mode into concrete component toggles and rejects combinations
the mode forbids, so the frozen copy written next to the run artifacts
is always complete and unambiguous.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .comm import CommConfig
from .policy import CriticConfig, PolicySettings
from .ppo import TrainConfig
from .rollout import RolloutConfig

MODES = ("ippo", "mappo", "mcgoppo")


class ConfigError(ValueError):
    """A run configuration that cannot be resolved."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved description of one training run."""

    env: str = "signal_spread"
    mode: str = "mcgoppo"
    seed: int = 0
    total_steps: int = 100_000
    out_dir: str = "runs/default"

    # component toggles, already resolved against the mode
    comm: bool = True
    global_attention: bool = True
    deep_shallow: bool = True
    value_from_message: bool = True

    # environment construction keywords
    env_kwargs: dict = field(default_factory=dict)

    # optimisation
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_clip_eps: float | None = None
    entropy_coef: float = 0.01
    epochs: int = 4
    minibatches: int = 2
    lr: float = 5e-4
    max_grad_norm: float = 10.0
    normalize_advantages: bool = True

    # rollout
    steps_per_update: int = 128
    n_envs: int = 4
    bootstrap: bool = True

    # communication widths
    d_m: int = 32
    d_k: int = 32
    d_z: int = 32
    k: int = 1
    encoder_hidden: int = 64
    weight_hidden: int = 64

    # network widths
    actor_hidden: int = 64
    critic_hidden: int = 64
    d_c: int = 32
    d_ck: int = 32
    deep_hidden: int = 64
    deep_out: int = 32
    shallow_out: int = 64
    head_hidden: int = 64

    # bookkeeping
    checkpoint_every: int = 0   # updates between periodic checkpoints; 0 = ends only
    log_every: int = 1          # updates between metrics rows
    timing: bool = False        # real wallclock_s breaks byte-identical reruns

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if not isinstance(self.env_kwargs, dict):
            raise ValueError("env_kwargs must be a mapping")

    @property
    def batch_size(self) -> int:
        return self.steps_per_update * self.n_envs

    def train_config(self, n_agents: int) -> TrainConfig:
        return TrainConfig(
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            clip_eps=self.clip_eps,
            entropy_coef=self.entropy_coef,
            batch_size=self.batch_size,
            n_agents=n_agents,
            epochs=self.epochs,
            minibatches=self.minibatches,
            lr=self.lr,
            value_clip_eps=self.value_clip_eps,
            max_grad_norm=self.max_grad_norm,
            normalize_advantages=self.normalize_advantages,
        )

    def rollout_config(self) -> RolloutConfig:
        return RolloutConfig(
            steps_per_update=self.steps_per_update,
            n_envs=self.n_envs,
            bootstrap=self.bootstrap,
        )

    def policy_settings(self) -> PolicySettings:
        kind = {"ippo": "local", "mappo": "concat", "mcgoppo": "structured"}[self.mode]
        critic = CriticConfig(
            kind=kind,
            hidden=self.critic_hidden,
            d_c=self.d_c,
            d_ck=self.d_ck,
            deep_hidden=self.deep_hidden,
            deep_out=self.deep_out,
            shallow_out=self.shallow_out,
            head_hidden=self.head_hidden,
            global_attention=self.global_attention,
            deep_shallow=self.deep_shallow,
        )
        comm_config = CommConfig(
            d_m=self.d_m,
            d_k=self.d_k,
            d_z=self.d_z,
            encoder_hidden=self.encoder_hidden,
            weight_hidden=self.weight_hidden,
            k=self.k,
            value_from_message=self.value_from_message,
        )
        return PolicySettings(
            comm=self.comm,
            critic=critic,
            comm_config=comm_config,
            actor_hidden=self.actor_hidden,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}
_TOGGLES = ("comm", "global_attention", "deep_shallow", "value_from_message")


def make_run_config(raw: dict) -> RunConfig:
    """Resolve a raw mapping into a RunConfig, applying mode defaults.

    ippo runs a local critic, mappo a plain concatenated-state critic;
    both force communication and the structured-critic units off.
    mcgoppo enables everything, with each component still individually
    toggleable for ablations.
    """
    raw = dict(raw or {})
    unknown = sorted(set(raw) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    mode = raw.get("mode", "mcgoppo")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")

    full = mode == "mcgoppo"
    comm = bool(raw.get("comm", full))
    if comm and not full:
        raise ConfigError(f"mode={mode} forces comm=off")
    for toggle in ("global_attention", "deep_shallow"):
        if raw.get(toggle, False) and not full:
            raise ConfigError(f"mode={mode} has no structured critic; {toggle} must stay off")
    if raw.get("value_from_message", False) and not comm:
        raise ConfigError("value_from_message needs communication enabled")

    resolved = dict(raw)
    resolved["mode"] = mode
    resolved["comm"] = comm
    resolved.setdefault("global_attention", full)
    resolved.setdefault("deep_shallow", full)
    resolved.setdefault("value_from_message", comm)
    if not full:
        resolved["global_attention"] = False
        resolved["deep_shallow"] = False
    if not comm:
        resolved["value_from_message"] = False
    try:
        cfg = RunConfig(**resolved)
        # probe the derived configs so bad numerics fail before any training
        cfg.train_config(n_agents=2)
        cfg.rollout_config()
        cfg.policy_settings()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_overrides(pairs: list[str]) -> dict:
    """`key=value` strings into a nested dict; values parse as YAML scalars."""
    out: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, _, value = pair.partition("=")
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = yaml.safe_load(value)
    return out


def deep_update(base: dict, extra: dict) -> dict:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            deep_update(base[key], value)
        else:
            base[key] = value
    return base


def load_raw(path: str | Path | None, overrides: list[str] | None = None) -> dict:
    """YAML file (optional) merged with key=value overrides, unresolved."""
    raw: dict = {}
    if path is not None:
        loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = loaded
    if overrides:
        deep_update(raw, parse_overrides(overrides))
    return raw


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """YAML file (optional) merged with key=value overrides."""
    return make_run_config(load_raw(path, overrides))


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    """Frozen copy of the resolved config, stable key order."""
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)
    Path(path).write_text(text, encoding="utf-8")
