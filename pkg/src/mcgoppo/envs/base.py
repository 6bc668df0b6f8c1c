"""Environment interface: specs, step results, and the base class."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..policy import ObsLayout, StateLayout

Array = np.ndarray


class IllegalActionError(RuntimeError):
    """An agent picked an action its legality mask forbids."""


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment's interface."""

    name: str
    n_agents: int
    n_enemies: int
    n_actions: int
    action_names: tuple[str, ...]
    obs_layout: ObsLayout
    state_layout: StateLayout
    t_max: int
    reward_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("need at least one agent")
        if self.n_enemies < 0:
            raise ValueError("n_enemies must be >= 0")
        if self.t_max < 1:
            raise ValueError("T_max must be >= 1")
        if len(self.action_names) != self.n_actions:
            raise ValueError("action_names must cover every action")
        if self.obs_layout.agent_id != self.n_agents:
            raise ValueError("agent_id one-hot width must equal n_agents")

    @property
    def obs_dim(self) -> int:
        return self.obs_layout.width


@dataclass
class StepResult:
    """Everything emitted by reset/step.

    rewards holds the shared team reward replicated per agent; masks flags
    legal actions; truncated marks T_max cutoffs (done is also set then).
    """

    obs: Array          # (n_agents, obs_dim)
    state: Array        # (flat_width,)
    rewards: Array      # (n_agents,)
    done: bool
    truncated: bool
    masks: Array        # (n_agents, n_actions) bool
    success: bool = False

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")


class MultiAgentEnv:
    """Deterministic-given-seed multi-agent environment."""

    spec: EnvSpec

    def __init__(self) -> None:
        self._rng: np.random.Generator | None = None

    def seed_stream(self, seed: int | None) -> np.random.Generator:
        """Reseed if a seed is given, otherwise continue the current stream."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        if self._rng is None:
            raise RuntimeError("reset() needs a seed on first use")
        return self._rng

    def reset(self, seed: int | None = None) -> StepResult:
        raise NotImplementedError

    def step(self, joint_action: Array) -> StepResult:
        raise NotImplementedError

    def check_legal(self, joint_action: Array, masks: Array) -> Array:
        joint_action = np.asarray(joint_action, dtype=np.int64).reshape(-1)
        if joint_action.size != self.spec.n_agents:
            raise IllegalActionError(
                f"need {self.spec.n_agents} actions, got {joint_action.size}"
            )
        if np.any(joint_action < 0) or np.any(joint_action >= self.spec.n_actions):
            raise IllegalActionError(f"action index out of range: {joint_action}")
        legal = masks[np.arange(self.spec.n_agents), joint_action]
        if not legal.all():
            bad = int(np.flatnonzero(~legal)[0])
            raise IllegalActionError(
                f"agent {bad} chose masked action {int(joint_action[bad])}"
            )
        return joint_action


def norm_coord(v: int, extent: int) -> float:
    """Map a grid coordinate in [0, extent-1] onto [-1, 1]."""
    if extent <= 1:
        return 0.0
    return 2.0 * v / (extent - 1) - 1.0
