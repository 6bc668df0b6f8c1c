"""Returns, advantages, clipped surrogate losses, and the update loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn_core import (
    Adam,
    NonFiniteGradientError,
    Tensor,
    as_tensor,
    clip_grad_norm,
    maximum,
    minimum,
)
from .policy import MultiAgentPolicy, log_probs_and_entropy

Array = np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """PPO hyperparameters; defaults follow common MAPPO practice."""

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    batch_size: int = 512
    n_agents: int = 2
    epochs: int = 4
    minibatches: int = 2
    lr: float = 5e-4
    value_clip_eps: float | None = None
    max_grad_norm: float = 10.0
    normalize_advantages: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.entropy_coef < 0.0:
            raise ValueError("entropy_coef must be >= 0")
        if self.batch_size < 1 or self.n_agents < 1:
            raise ValueError("batch_size and n_agents must be positive")
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("epochs and minibatches must be positive")
        if self.batch_size % self.minibatches != 0:
            raise ValueError("batch_size must be divisible by minibatches")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")

    @property
    def value_eps(self) -> float:
        return self.clip_eps if self.value_clip_eps is None else self.value_clip_eps


@dataclass
class TrajectoryBatch:
    """Flattened on-policy sample pool: leading dim B, one row per timestep."""

    obs: Array                 # (B, n, obs_dim)
    states: Array | None       # (B, flat_width)
    actions: Array             # (B, n)
    logp_old: Array            # (B, n)
    rewards: Array             # (B, n)
    values_old: Array          # (B, n)
    dones: Array               # (B,)
    masks: Array | None        # (B, n, n_actions)
    advantages: Array | None = None   # (B, n), raw (unnormalized)
    returns: Array | None = None      # (B, n)

    def __post_init__(self) -> None:
        b, n = self.actions.shape
        expect = {
            "obs": (b, n, self.obs.shape[-1]),
            "logp_old": (b, n),
            "rewards": (b, n),
            "values_old": (b, n),
            "dones": (b,),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} shape {got} != {shape}")

    @property
    def size(self) -> int:
        return self.actions.shape[0]


# ---------------------------------------------------------------------------
# returns and advantages


def discounted_returns(
    rewards: Array, dones: Array, gamma: float, bootstrap: Array | float = 0.0
) -> Array:
    """R_t = sum_{u >= t} gamma^(u-t) r_u, cut at done flags.

    Works on (T,) or (T, ...) arrays; `bootstrap` is the value estimate
    beyond the last row for rollouts that end mid-episode.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    out = np.zeros_like(rewards)
    running = np.broadcast_to(np.asarray(bootstrap, dtype=np.float64), rewards.shape[1:]).copy()
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = np.where(dones[t], 0.0, running)
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def gae(
    rewards: Array,
    values: Array,
    dones: Array,
    gamma: float,
    lam: float,
    truncation_values: Array | None = None,
) -> Array:
    """Generalized advantage estimation with episode-boundary resets.

    values carries one extra trailing row (the bootstrap); at truncated
    steps the next value comes from `truncation_values` (the critic's
    estimate of the cut-off state) instead of zero.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1:
        raise ValueError("values needs exactly one bootstrap row beyond rewards")
    cont = ~dones
    next_values = np.where(cont, values[1:], 0.0)
    if truncation_values is not None:
        next_values = next_values + np.where(dones, truncation_values, 0.0)
    deltas = rewards + gamma * next_values - values[:-1]
    out = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:], dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        running = deltas[t] + gamma * lam * np.where(cont[t], running, 0.0)
        out[t] = running
    return out


def normalize_advantages(advantages: Array) -> Array:
    """Zero-mean, unit-variance rescaling over the whole batch."""
    advantages = np.asarray(advantages, dtype=np.float64)
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


# ---------------------------------------------------------------------------
# losses


def ratio(logp_new, logp_old):
    """Importance ratio exp(logp_new - logp_old); works on floats or arrays."""
    return np.exp(np.asarray(logp_new, dtype=np.float64) - np.asarray(logp_old))


def actor_loss(
    ratios: Tensor,
    advantages: Array,
    entropies: Tensor,
    clip_eps: float,
    entropy_coef: float,
) -> Tensor:
    """Negated clipped surrogate objective (minimize this).

    objective = mean(min(r*A, clip(r, 1-eps, 1+eps)*A)) + sigma * mean(S)
    """
    ratios = as_tensor(ratios)
    entropies = as_tensor(entropies)
    adv = np.asarray(advantages, dtype=np.float64)
    surrogate = minimum(ratios * adv, ratios.clip(1.0 - clip_eps, 1.0 + clip_eps) * adv)
    objective = surrogate.mean() + entropies.mean() * entropy_coef
    return -objective


def critic_loss(v_new: Tensor, v_old: Array, returns: Array, clip_eps: float) -> Tensor:
    """Clipped value regression: mean of the worse of the two squared errors."""
    v_new = as_tensor(v_new)
    v_old = np.asarray(v_old, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    clipped = (v_new - v_old).clip(-clip_eps, clip_eps) + v_old
    plain = (v_new - returns) * (v_new - returns)
    bounded = (clipped - returns) * (clipped - returns)
    return maximum(plain, bounded).mean()


# ---------------------------------------------------------------------------
# the update loop


@dataclass
class UpdateDiagnostics:
    actor_losses: list[float] = field(default_factory=list)
    critic_losses: list[float] = field(default_factory=list)
    entropies: list[float] = field(default_factory=list)
    mean_ratios: list[float] = field(default_factory=list)
    clip_fractions: list[float] = field(default_factory=list)
    first_minibatch_ratio: float = float("nan")
    first_minibatch_clip_fraction: float = float("nan")
    aborted: bool = False

    def last(self, name: str) -> float:
        values = getattr(self, name)
        return values[-1] if values else float("nan")


def _snapshot(params) -> list[tuple[Array, Array, Array]]:
    return [(p.value.copy(), p.adam_m.copy(), p.adam_v.copy()) for p in params]


def _restore(params, snap) -> None:
    for p, (value, m, v) in zip(params, snap):
        p.value[...] = value
        p.adam_m[...] = m
        p.adam_v[...] = v


def update(
    policy: MultiAgentPolicy,
    batch: TrajectoryBatch,
    cfg: TrainConfig,
    actor_opt: Adam,
    critic_opt: Adam,
    rng: np.random.Generator,
) -> UpdateDiagnostics:
    """Epoch/minibatch PPO pass over one sample pool.

    Log-probs, entropies and values are recomputed per minibatch (the
    communication features included), so the first minibatch reproduces
    the stored behavior exactly.  A non-finite loss or gradient aborts
    the update and restores the pre-update parameters.
    """
    if batch.advantages is None or batch.returns is None:
        raise ValueError("finalize the batch (advantages/returns) before update")
    b = batch.size
    n = batch.actions.shape[1]
    diag = UpdateDiagnostics()
    adv = batch.advantages
    if cfg.normalize_advantages:
        adv = normalize_advantages(adv)

    actor_params = policy.actor_side_parameters()
    critic_params = policy.critic_side_parameters()
    snap_actor = _snapshot(actor_params)
    snap_critic = _snapshot(critic_params)
    mb_size = max(b // cfg.minibatches, 1)
    first = True

    for _ in range(cfg.epochs):
        order = rng.permutation(b)
        ep_actor, ep_critic, ep_ent, ep_ratio, ep_clip = [], [], [], [], []
        for start in range(0, mb_size * cfg.minibatches, mb_size):
            idx = order[start:start + mb_size]
            rows = idx.size * n
            obs_mb = batch.obs[idx]
            masks_mb = None if batch.masks is None else batch.masks[idx].reshape(rows, -1)
            actions_mb = batch.actions[idx].reshape(rows)
            logp_old_mb = batch.logp_old[idx].reshape(rows)
            adv_mb = adv[idx].reshape(rows)

            logits = policy.action_logits(obs_mb)
            logp_new, ent = log_probs_and_entropy(logits, actions_mb, masks_mb)
            ratios = (logp_new - logp_old_mb).exp()
            a_loss = actor_loss(ratios, adv_mb, ent, cfg.clip_eps, cfg.entropy_coef)

            states_mb = None if batch.states is None else batch.states[idx]
            v_new = policy.critic.values(states_mb, obs_mb).reshape(rows)
            c_loss = critic_loss(
                v_new,
                batch.values_old[idx].reshape(rows),
                batch.returns[idx].reshape(rows),
                cfg.value_eps,
            )

            if not (np.isfinite(a_loss.data).all() and np.isfinite(c_loss.data).all()):
                _restore(actor_params, snap_actor)
                _restore(critic_params, snap_critic)
                diag.aborted = True
                return diag

            mean_ratio = float(ratios.data.mean())
            clip_frac = float((np.abs(ratios.data - 1.0) > cfg.clip_eps).mean())
            if first:
                diag.first_minibatch_ratio = mean_ratio
                diag.first_minibatch_clip_fraction = clip_frac
                first = False

            try:
                for p in actor_params:
                    p.zero_grad()
                a_loss.backward()
                clip_grad_norm(actor_params, cfg.max_grad_norm)
                actor_opt.step()

                for p in critic_params:
                    p.zero_grad()
                c_loss.backward()
                clip_grad_norm(critic_params, cfg.max_grad_norm)
                critic_opt.step()
            except NonFiniteGradientError:
                _restore(actor_params, snap_actor)
                _restore(critic_params, snap_critic)
                diag.aborted = True
                return diag

            ep_actor.append(float(a_loss.data))
            ep_critic.append(float(c_loss.data))
            ep_ent.append(float(ent.data.mean()))
            ep_ratio.append(mean_ratio)
            ep_clip.append(clip_frac)
        diag.actor_losses.append(float(np.mean(ep_actor)))
        diag.critic_losses.append(float(np.mean(ep_critic)))
        diag.entropies.append(float(np.mean(ep_ent)))
        diag.mean_ratios.append(float(np.mean(ep_ratio)))
        diag.clip_fractions.append(float(np.mean(ep_clip)))
    return diag
