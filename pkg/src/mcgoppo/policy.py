"""Actors, critics and action distributions for the multi-agent learner.

The actor maps a local observation (optionally concatenated with fused
communication features) to categorical logits.  Three critic variants
cover the algorithm modes: a local-observation critic, a plain
concatenated-state critic, and the structured critic that condenses
per-agent global rows through attention and routes enemy features
through a deep stack and everything else through a shallow layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comm import CommConfig, CommModule, schedule_batch
from .nn_core import (
    Linear,
    Mlp,
    MlpSpec,
    Module,
    ShapeError,
    Tensor,
    attention,
    concat,
    constant,
    no_grad,
)

Array = np.ndarray

MASK_FILL = -1e9


@dataclass(frozen=True)
class ObsLayout:
    """Segment widths of a flat observation: own|allies|enemies|movement|id."""

    own: int
    allies: int
    enemies: int
    movement: int
    agent_id: int

    def __post_init__(self) -> None:
        for name in ("own", "allies", "enemies", "movement", "agent_id"):
            if getattr(self, name) < 0:
                raise ValueError(f"segment width {name} must be >= 0")
        if self.own < 1 or self.agent_id < 1:
            raise ValueError("own and agent_id segments must be non-empty")

    @property
    def width(self) -> int:
        return self.own + self.allies + self.enemies + self.movement + self.agent_id


@dataclass
class AgentObservation:
    """One agent's local view, split into the layout's five segments."""

    own: Array
    allies: Array
    enemies: Array
    movement: Array
    agent_id: Array

    def flat(self) -> Array:
        return np.concatenate([self.own, self.allies, self.enemies, self.movement, self.agent_id])

    @classmethod
    def from_flat(cls, vec: Array, layout: ObsLayout) -> "AgentObservation":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != layout.width:
            raise ShapeError(f"observation width {vec.size} != layout width {layout.width}")
        bounds = np.cumsum([layout.own, layout.allies, layout.enemies, layout.movement])
        parts = np.split(vec, bounds)
        return cls(*parts)


@dataclass(frozen=True)
class StateLayout:
    """Global state layout: leading per-agent rows, then extra features.

    The flat state starts with `n_rows * row_width` entries holding one
    ground-truth row per unit; `enemy_start:enemy_stop` marks the enemy
    feature segment inside the flat vector.
    """

    n_rows: int
    row_width: int
    flat_width: int
    enemy_start: int
    enemy_stop: int

    def __post_init__(self) -> None:
        if self.n_rows < 1 or self.row_width < 1:
            raise ValueError("need at least one state row")
        if self.n_rows * self.row_width > self.flat_width:
            raise ValueError("rows do not fit into the flat state")
        if not 0 <= self.enemy_start <= self.enemy_stop <= self.flat_width:
            raise ValueError("enemy segment out of bounds")

    @property
    def enemy_width(self) -> int:
        return self.enemy_stop - self.enemy_start

    @property
    def rest_width(self) -> int:
        return self.flat_width - self.enemy_width

    def rows(self, flat: Array) -> Array:
        """(B, flat_width) -> (B, n_rows, row_width) view of the row block."""
        flat = np.asarray(flat)
        b = flat.shape[0]
        return flat[:, : self.n_rows * self.row_width].reshape(b, self.n_rows, self.row_width)


# ---------------------------------------------------------------------------
# categorical action distributions


def _masked(logits: Array, mask: Array | None) -> Array:
    if mask is None:
        return logits
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ShapeError(f"mask shape {mask.shape} != logits shape {logits.shape}")
    if not mask.any(axis=-1).all():
        raise ValueError("at least one action must be legal per agent")
    return np.where(mask, logits, MASK_FILL)


class CategoricalDist:
    """Batched categorical over discrete actions, with optional legality mask."""

    def __init__(self, logits: Array, mask: Array | None = None) -> None:
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 2:
            raise ShapeError("logits must be (batch, actions)")
        self.logits = _masked(logits, mask)
        shifted = self.logits - self.logits.max(axis=-1, keepdims=True)
        self.log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.probs = np.exp(self.log_probs)

    def sample(self, rng: np.random.Generator) -> tuple[Array, Array]:
        """Draw one action per row; returns (actions, log-probabilities)."""
        cum = self.probs.cumsum(axis=-1)
        u = rng.random((self.probs.shape[0], 1))
        actions = (u > cum).sum(axis=-1)
        np.clip(actions, 0, self.probs.shape[1] - 1, out=actions)
        rows = np.arange(actions.size)
        return actions, self.log_probs[rows, actions]

    def argmax(self) -> Array:
        return self.probs.argmax(axis=-1)

    def log_prob(self, actions: Array) -> Array:
        return self.log_probs[np.arange(actions.size), actions]

    def entropy(self) -> Array:
        return -(self.probs * self.log_probs).sum(axis=-1)


def masked_logits_t(logits: Tensor, mask: Array | None) -> Tensor:
    """Tensor-side mask application matching `CategoricalDist`."""
    if mask is None:
        return logits
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("at least one action must be legal per agent")
    return logits + constant(np.where(mask, 0.0, MASK_FILL))


def log_probs_and_entropy(logits: Tensor, actions: Array, mask: Array | None) -> tuple[Tensor, Tensor]:
    """Per-row log pi(a) and entropy as graph nodes, shape (batch,) each."""
    ml = masked_logits_t(logits, mask)
    logp = ml.log_softmax(axis=-1)
    picked = logp.take_per_row(np.asarray(actions, dtype=np.int64))
    ent = (ml.softmax(axis=-1) * logp).sum(axis=-1) * -1.0
    return picked, ent


# ---------------------------------------------------------------------------
# actor


class Actor(Module):
    """Shared-parameter actor over observation (plus fused comm features)."""

    def __init__(
        self,
        obs_dim: int,
        n_actions: int,
        z_dim: int,
        rng: np.random.Generator,
        hidden: int = 64,
        name: str = "actor",
    ) -> None:
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.z_dim = z_dim
        self.net = Mlp(
            MlpSpec((obs_dim + z_dim, hidden, hidden, n_actions), "tanh", "identity"),
            rng,
            name,
            final_gain=0.01,
        )

    def logits(self, obs: Tensor, z: Tensor | None = None) -> Tensor:
        if (z is None) != (self.z_dim == 0):
            raise ShapeError("fused features required iff the actor was built with z_dim > 0")
        x = obs if z is None else concat([obs, z], axis=-1)
        return self.net(x)


# ---------------------------------------------------------------------------
# critics


@dataclass(frozen=True)
class CriticConfig:
    """Critic variant and widths.

    kind: "local" (per-agent observation only), "concat" (flat global state
    plus agent one-hot), or "structured" (attention unit + deep/shallow).
    """

    kind: str = "structured"
    hidden: int = 64
    d_c: int = 32
    d_ck: int = 32
    deep_hidden: int = 64
    deep_out: int = 32
    shallow_out: int = 64
    head_hidden: int = 64
    global_attention: bool = True
    deep_shallow: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("local", "concat", "structured"):
            raise ValueError(f"unknown critic kind {self.kind!r}")


class Critic(Module):
    """Centralized (or local) value function emitting one value per agent."""

    def __init__(
        self,
        cfg: CriticConfig,
        obs_dim: int,
        n_agents: int,
        layout: StateLayout | None,
        rng: np.random.Generator,
        name: str = "critic",
    ) -> None:
        self.cfg = cfg
        self.obs_dim = obs_dim
        self.n_agents = n_agents
        self.layout = layout
        if cfg.kind != "local" and layout is None:
            raise ValueError(f"critic kind {cfg.kind!r} needs a state layout")
        if cfg.kind == "local":
            self.net = Mlp(MlpSpec((obs_dim, cfg.hidden, cfg.hidden, 1), "tanh", "identity"), rng, name)
            return
        if cfg.kind == "concat":
            in_dim = layout.flat_width + n_agents
            self.net = Mlp(MlpSpec((in_dim, cfg.hidden, cfg.hidden, 1), "tanh", "identity"), rng, name)
            return
        if layout.n_rows < n_agents:
            raise ValueError("structured critic expects one leading state row per agent")
        if cfg.global_attention:
            self.q_proj = Linear(obs_dim, cfg.d_ck, rng, name=f"{name}.q_proj")
            self.k_proj = Linear(layout.row_width, cfg.d_ck, rng, name=f"{name}.k_proj")
            self.v_proj = Linear(layout.row_width, cfg.d_c, rng, name=f"{name}.v_proj")
        else:
            self.row_proj = Linear(layout.row_width, cfg.d_c, rng, name=f"{name}.row_proj")
        self.has_deep = layout.enemy_width > 0
        fused = self.cfg.shallow_out + (cfg.deep_out if self.has_deep else 0)
        if cfg.deep_shallow:
            if self.has_deep:
                self.deep = Mlp(
                    MlpSpec((layout.enemy_width, cfg.deep_hidden, cfg.deep_hidden, cfg.deep_out),
                            "tanh", "tanh"),
                    rng,
                    f"{name}.deep",
                )
            self.shallow = Linear(layout.rest_width + cfg.d_c, cfg.shallow_out, rng,
                                  name=f"{name}.shallow")
        else:
            self.flat_proj = Linear(layout.flat_width + cfg.d_c, fused, rng,
                                    name=f"{name}.flat_proj")
        self.head = Mlp(MlpSpec((fused, cfg.head_hidden, 1), "tanh", "identity"),
                        rng, f"{name}.head")

    # -- forward -------------------------------------------------------------

    def values(self, state_flat: Array | None, joint_obs: Array) -> Tensor:
        """Per-agent values, shape (B, n).

        joint_obs: (B, n, obs_dim); state_flat: (B, flat_width) or None for
        the local variant.
        """
        joint_obs = np.asarray(joint_obs, dtype=np.float64)
        b, n, d = joint_obs.shape
        if n != self.n_agents or d != self.obs_dim:
            raise ShapeError(f"joint_obs shape {joint_obs.shape} does not match critic dims")
        if self.cfg.kind == "local":
            out = self.net(constant(joint_obs.reshape(b * n, d)))
            return out.reshape(b, n)
        state_flat = np.asarray(state_flat, dtype=np.float64)
        if state_flat.shape != (b, self.layout.flat_width):
            raise ShapeError(f"state shape {state_flat.shape} != (B, {self.layout.flat_width})")
        if self.cfg.kind == "concat":
            tiled = np.repeat(state_flat, n, axis=0)
            ids = np.tile(np.eye(n), (b, 1))
            out = self.net(constant(np.concatenate([tiled, ids], axis=1)))
            return out.reshape(b, n)
        condensed = self.condense(state_flat, joint_obs)  # (B, n, d_c)
        fused = self._route(state_flat, condensed, b, n)  # (B*n, fused)
        return self.head(fused).reshape(b, n)

    def condense(self, state_flat: Array, joint_obs: Array) -> Tensor:
        """Per-agent condensed global features, shape (B, n, d_c)."""
        b, n, d = joint_obs.shape
        rows = self.layout.rows(state_flat)  # (B, R, W)
        if self.cfg.global_attention:
            q = self.q_proj(constant(joint_obs.reshape(b * n, d))).reshape(b, n, self.cfg.d_ck)
            flat_rows = constant(rows.reshape(b * self.layout.n_rows, self.layout.row_width))
            k = self.k_proj(flat_rows).reshape(b, self.layout.n_rows, self.cfg.d_ck)
            v = self.v_proj(flat_rows).reshape(b, self.layout.n_rows, self.cfg.d_c)
            return attention(q, k, v)
        own = rows[:, :n, :].reshape(b * n, self.layout.row_width)
        return self.row_proj(constant(own)).reshape(b, n, self.cfg.d_c)

    def _route(self, state_flat: Array, condensed: Tensor, b: int, n: int) -> Tensor:
        cond_flat = condensed.reshape(b * n, self.cfg.d_c)
        lay = self.layout
        if not self.cfg.deep_shallow:
            tiled = constant(np.repeat(state_flat, n, axis=0))
            return self.flat_proj(concat([tiled, cond_flat], axis=-1)).tanh()
        enemy = state_flat[:, lay.enemy_start:lay.enemy_stop]
        rest = np.concatenate(
            [state_flat[:, : lay.enemy_start], state_flat[:, lay.enemy_stop:]], axis=1
        )
        rest_tiled = constant(np.repeat(rest, n, axis=0))
        shallow = self.shallow(concat([rest_tiled, cond_flat], axis=-1)).tanh()
        if not self.has_deep:
            return shallow
        deep = self.deep(constant(np.repeat(enemy, n, axis=0)))
        return concat([deep, shallow], axis=-1)


# ---------------------------------------------------------------------------
# assembled policy


@dataclass(frozen=True)
class PolicySettings:
    """Which components are active, resolved from the algorithm mode."""

    comm: bool = True
    critic: CriticConfig = CriticConfig()
    comm_config: CommConfig = CommConfig()
    actor_hidden: int = 64

    @classmethod
    def for_mode(
        cls,
        mode: str,
        comm_config: CommConfig | None = None,
        critic_overrides: dict | None = None,
        actor_hidden: int = 64,
    ) -> "PolicySettings":
        """ippo: local critic, no comm.  mappo: concat critic, no comm.
        mcgoppo: structured critic plus communication."""
        if mode not in ("ippo", "mappo", "mcgoppo"):
            raise ValueError(f"unknown mode {mode!r}")
        kind = {"ippo": "local", "mappo": "concat", "mcgoppo": "structured"}[mode]
        overrides = dict(critic_overrides or {})
        overrides["kind"] = kind
        return cls(
            comm=(mode == "mcgoppo"),
            critic=CriticConfig(**overrides),
            comm_config=comm_config or CommConfig(),
            actor_hidden=actor_hidden,
        )


class MultiAgentPolicy(Module):
    """Actor, critic and (optionally) communication, wired per settings.

    The same forward path serves rollout (under no_grad) and the update
    (on the tape): encode and publish all messages, schedule partners,
    fuse, then score actions.
    """

    def __init__(
        self,
        settings: PolicySettings,
        obs_dim: int,
        n_actions: int,
        n_agents: int,
        layout: StateLayout | None,
        rng: np.random.Generator,
    ) -> None:
        self.settings = settings
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.n_agents = n_agents
        self.comm = (
            CommModule(obs_dim, settings.comm_config, rng) if settings.comm else None
        )
        z_dim = settings.comm_config.d_z if settings.comm else 0
        self.actor = Actor(obs_dim, n_actions, z_dim, rng, hidden=settings.actor_hidden)
        self.critic = Critic(settings.critic, obs_dim, n_agents, layout, rng)

    # -- communication two-phase recompute ------------------------------------

    def comm_features(self, joint_obs: Array) -> tuple[Tensor, Array]:
        """Fused features for every agent from a joint observation batch.

        joint_obs: (B, n, obs_dim).  Phase one encodes every agent's message
        and scheduling weight; phase two selects top-k partners per agent
        and fuses their payloads.  Returns ((B*n, d_z) tensor, (B, n, k)
        selected indices).  Selection is recomputed here and carries no
        gradient; message content does.
        """
        if self.comm is None:
            raise RuntimeError("communication is disabled in this configuration")
        joint_obs = np.asarray(joint_obs, dtype=np.float64)
        b, n, d = joint_obs.shape
        cfg = self.settings.comm_config
        flat_obs = constant(joint_obs.reshape(b * n, d))
        payloads = self.comm.encode(flat_obs)  # (B*n, d_m)
        with no_grad():
            raw = self.comm.raw_weights(flat_obs).data.reshape(b, n)
        selection = schedule_batch(raw, cfg.k)  # (B, n, k)
        flat_sel = (np.arange(b)[:, None, None] * n + selection).reshape(-1)
        msgs = payloads.take_rows(flat_sel).reshape(b * n, cfg.k, cfg.d_m)
        z = self.comm.fuse(flat_obs, msgs)
        return z, selection

    def action_logits(self, joint_obs: Array) -> Tensor:
        """(B, n, obs_dim) -> (B*n, n_actions) actor logits."""
        joint_obs = np.asarray(joint_obs, dtype=np.float64)
        b, n, d = joint_obs.shape
        flat_obs = constant(joint_obs.reshape(b * n, d))
        if self.comm is None:
            return self.actor.logits(flat_obs)
        z, _ = self.comm_features(joint_obs)
        return self.actor.logits(flat_obs, z)

    def act(
        self,
        joint_obs: Array,
        masks: Array | None,
        rng: np.random.Generator,
        greedy: bool = False,
    ) -> tuple[Array, Array]:
        """Sample (or argmax) one action per agent.

        joint_obs: (B, n, obs_dim); masks: (B, n, n_actions) bool or None.
        Returns actions (B, n) and log-probs (B, n).
        """
        b, n, _ = np.asarray(joint_obs).shape
        with no_grad():
            logits = self.action_logits(joint_obs).data
        flat_mask = None if masks is None else np.asarray(masks, dtype=bool).reshape(b * n, -1)
        dist = CategoricalDist(logits, flat_mask)
        if greedy:
            actions = dist.argmax()
            logp = dist.log_prob(actions)
        else:
            actions, logp = dist.sample(rng)
        return actions.reshape(b, n), logp.reshape(b, n)

    def compute_values(self, state_flat: Array | None, joint_obs: Array) -> Array:
        """Critic values as plain numpy, shape (B, n)."""
        with no_grad():
            return self.critic.values(state_flat, joint_obs).data

    def actor_side_parameters(self) -> list:
        """Parameters updated by the actor loss (actor plus communication)."""
        params = self.actor.parameters()
        if self.comm is not None:
            params = params + self.comm.parameters()
        return params

    def critic_side_parameters(self) -> list:
        return self.critic.parameters()

    def all_named_parameters(self) -> dict[str, Array]:
        return {p.name: p.value for p in self.parameters()}
