"""Inter-agent communication: encoding, weight scheduling, pooling, fusion.

Each agent compresses its observation into a fixed-width message and a
scalar scheduling weight.  Weights are softmax-normalized and ranked; the
top-k other agents' messages are read from a shared pool and fused with
the agent's own observation through scaled dot-product attention.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .nn_core import (
    Linear,
    Mlp,
    MlpSpec,
    Module,
    Tensor,
    attention,
    no_grad,
    softmax_np,
)

Array = np.ndarray


@dataclass
class Message:
    """One agent's published communication payload for one timestep."""

    payload: Array
    source_agent: int
    step_tag: int

    def __post_init__(self) -> None:
        self.payload = np.asarray(self.payload, dtype=np.float64).reshape(-1)


class MessagePool:
    """Per-agent latest-message store with overwrite semantics.

    Reads of a never-written slot return a zero payload tagged -1.  Writes
    take an exclusive lock and replace the whole row at once, so a reader
    never sees a half-written payload.
    """

    def __init__(self, n_agents: int, d_m: int) -> None:
        if n_agents < 1 or d_m < 1:
            raise ValueError("pool needs at least one agent and a positive payload width")
        self.n_agents = n_agents
        self.d_m = d_m
        self._payloads = np.zeros((n_agents, d_m))
        self._step_tags = np.full(n_agents, -1, dtype=np.int64)
        self._lock = threading.Lock()

    def write(self, msg: Message) -> None:
        if not 0 <= msg.source_agent < self.n_agents:
            raise IndexError(f"agent index {msg.source_agent} out of range")
        if msg.payload.shape != (self.d_m,):
            raise ValueError(f"payload width {msg.payload.shape} != ({self.d_m},)")
        with self._lock:
            if msg.step_tag < self._step_tags[msg.source_agent]:
                raise ValueError("step_tag must never decrease for a given agent")
            self._payloads[msg.source_agent] = msg.payload
            self._step_tags[msg.source_agent] = msg.step_tag

    def write_batch(self, payloads: Array, step_tag: int) -> None:
        """Publish every agent's message for one timestep at once."""
        payloads = np.asarray(payloads, dtype=np.float64)
        if payloads.shape != (self.n_agents, self.d_m):
            raise ValueError(f"payload block {payloads.shape} != ({self.n_agents}, {self.d_m})")
        with self._lock:
            if np.any(step_tag < self._step_tags):
                raise ValueError("step_tag must never decrease for a given agent")
            self._payloads[...] = payloads
            self._step_tags[...] = step_tag

    def read(self, agent: int) -> Message:
        if not 0 <= agent < self.n_agents:
            raise IndexError(f"agent index {agent} out of range")
        with self._lock:
            return Message(self._payloads[agent].copy(), agent, int(self._step_tags[agent]))

    def payload_matrix(self) -> Array:
        """Snapshot of all payload rows, shape (n_agents, d_m)."""
        with self._lock:
            return self._payloads.copy()

    def step_tags(self) -> Array:
        with self._lock:
            return self._step_tags.copy()

    def reset(self) -> None:
        with self._lock:
            self._payloads[...] = 0.0
            self._step_tags[...] = -1


@dataclass
class SchedulingWeights:
    """Raw per-agent scalars and their softmax normalization."""

    raw: Array
    normalized: Array = field(init=False)

    def __post_init__(self) -> None:
        self.raw = np.asarray(self.raw, dtype=np.float64).reshape(-1)
        if self.raw.size < 2:
            raise ValueError("need at least two agents to schedule")
        if not np.all(np.isfinite(self.raw)):
            raise ValueError("scheduling weights must be finite")
        self.normalized = softmax_np(self.raw)


def schedule(weights: SchedulingWeights, k: int, self_index: int) -> list[int]:
    """Indices of the k largest-weight agents, self excluded.

    Ordered by non-increasing normalized weight; exact ties resolve to the
    lower agent index.
    """
    n = weights.raw.size
    if not 0 <= self_index < n:
        raise IndexError(f"self_index {self_index} out of range")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    others = [j for j in range(n) if j != self_index]
    others.sort(key=lambda j: (-weights.normalized[j], j))
    return others[:k]


def schedule_batch(raw: Array, k: int) -> Array:
    """Vectorized schedule for every agent at once.

    `raw` has shape (batch, n); returns int indices of shape (batch, n, k)
    where row [b, i] lists agent i's selected partners.  Matches
    `schedule` exactly, including softmax normalization and tie-breaking.
    """
    raw = np.asarray(raw, dtype=np.float64)
    batch, n = raw.shape
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    norm = e / e.sum(axis=1, keepdims=True)
    # sort by (-weight, index): stable mergesort on -weight keeps index order
    order = np.argsort(-norm, axis=1, kind="stable")  # (batch, n)
    out = np.empty((batch, n, k), dtype=np.int64)
    for i in range(n):
        kept = order[order != i].reshape(batch, n - 1)
        out[:, i, :] = kept[:, :k]
    return out


@dataclass(frozen=True)
class CommConfig:
    """Hyperparameters of the communication subsystem."""

    d_m: int = 32
    d_k: int = 32
    d_z: int = 32
    encoder_hidden: int = 64
    weight_hidden: int = 64
    k: int = 1
    # True: attention values come from the received messages, so fused
    # features (and gradients) carry the senders' content.  False: values
    # are projected from the receiver's own observation, which makes the
    # fusion collapse to that projection whatever the messages say; kept
    # as an ablation switch.
    value_from_message: bool = True
    encoder_activation: str = "tanh"
    encoder_final_activation: str = "tanh"

    def __post_init__(self) -> None:
        for name in ("d_m", "d_k", "d_z", "encoder_hidden", "weight_hidden", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


class CommModule(Module):
    """Message encoder, weight generator, and attention fusion."""

    def __init__(
        self,
        obs_dim: int,
        config: CommConfig,
        rng: np.random.Generator,
        name: str = "comm",
    ) -> None:
        self.obs_dim = obs_dim
        self.config = config
        c = config
        self.encoder = Mlp(
            MlpSpec(
                (obs_dim, c.encoder_hidden, c.d_m),
                c.encoder_activation,
                c.encoder_final_activation,
            ),
            rng,
            f"{name}.encoder",
        )
        self.weight_gen = Mlp(
            MlpSpec((obs_dim, c.weight_hidden, c.weight_hidden, 1), "tanh", "identity"),
            rng,
            f"{name}.weight_gen",
        )
        self.q_proj = Linear(obs_dim, c.d_k, rng, name=f"{name}.q_proj")
        self.k_proj = Linear(c.d_m, c.d_k, rng, name=f"{name}.k_proj")
        self.v_msg = Linear(c.d_m, c.d_z, rng, name=f"{name}.v_msg")
        self.v_obs = Linear(obs_dim, c.d_z, rng, name=f"{name}.v_obs")

    # -- batched tensor paths (differentiable) ------------------------------

    def encode(self, obs: Tensor) -> Tensor:
        """(B, obs_dim) -> (B, d_m) message payloads."""
        return self.encoder(obs)

    def raw_weights(self, obs: Tensor) -> Tensor:
        """(B, obs_dim) -> (B, 1) scheduling scalars."""
        return self.weight_gen(obs)

    def fuse(self, obs: Tensor, msgs: Tensor) -> Tensor:
        """Fuse received messages into one feature row per receiver.

        obs: (B, obs_dim); msgs: (B, J, d_m) with J >= 1 selected payloads
        per receiver.  Returns (B, d_z).
        """
        if msgs.data.ndim != 3:
            raise ValueError("msgs must have shape (B, J, d_m)")
        b, j, d_m = msgs.data.shape
        if d_m != self.config.d_m:
            raise ValueError(f"payload width {d_m} != configured {self.config.d_m}")
        q = self.q_proj(obs).reshape(b, 1, self.config.d_k)
        flat = msgs.reshape(b * j, d_m)
        k = self.k_proj(flat).reshape(b, j, self.config.d_k)
        if self.config.value_from_message:
            v = self.v_msg(flat).reshape(b, j, self.config.d_z)
        else:
            tile = np.repeat(np.arange(b), j)
            v = self.v_obs(obs).take_rows(tile).reshape(b, j, self.config.d_z)
        return attention(q, k, v).reshape(b, self.config.d_z)

    # -- single-agent conveniences -------------------------------------------

    def encode_message(self, obs_vec: Array, source_agent: int, step_tag: int) -> Message:
        obs_vec = np.asarray(obs_vec, dtype=np.float64).reshape(1, -1)
        with no_grad():
            payload = self.encode(Tensor(obs_vec)).data[0]
        return Message(payload, source_agent, step_tag)

    def generate_weight(self, obs_vec: Array) -> float:
        obs_vec = np.asarray(obs_vec, dtype=np.float64).reshape(1, -1)
        with no_grad():
            return float(self.raw_weights(Tensor(obs_vec)).data[0, 0])

    def process_messages(self, obs_vec: Array, received: list[Message]) -> Array:
        """Fused feature z_i for one receiver; empty inbox falls back to a
        plain projection of the observation."""
        obs_vec = np.asarray(obs_vec, dtype=np.float64).reshape(1, -1)
        with no_grad():
            if not received:
                return self.v_obs(Tensor(obs_vec)).data[0]
            payloads = np.stack([m.payload for m in received])[None, :, :]
            return self.fuse(Tensor(obs_vec), Tensor(payloads)).data[0]
