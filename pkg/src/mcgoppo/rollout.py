"""On-policy sample collection over parallel environment copies.

Each collected step runs the two-phase communication protocol: every
agent first encodes and publishes its message and scheduling weight,
then every agent selects partners, reads the pool, fuses, and acts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comm import MessagePool, schedule_batch
from .envs import MultiAgentEnv, StepResult
from .nn_core import constant, no_grad
from .policy import CategoricalDist, MultiAgentPolicy
from .ppo import TrainConfig, TrajectoryBatch, gae

Array = np.ndarray


@dataclass(frozen=True)
class RolloutConfig:
    """Sample-pool sizing; steps_per_update * n_envs rows feed each update."""

    steps_per_update: int
    n_envs: int = 4
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.steps_per_update < 1 or self.n_envs < 1:
            raise ValueError("steps_per_update and n_envs must be positive")

    @property
    def batch_size(self) -> int:
        return self.steps_per_update * self.n_envs


@dataclass
class EpisodeStats:
    """Completed-episode accumulators, drained by the training loop."""

    rewards: list[float] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    successes: list[bool] = field(default_factory=list)

    def add(self, reward: float, length: int, success: bool) -> None:
        self.rewards.append(reward)
        self.lengths.append(length)
        self.successes.append(success)

    def drain(self) -> "EpisodeStats":
        out = EpisodeStats(list(self.rewards), list(self.lengths), list(self.successes))
        self.rewards.clear()
        self.lengths.clear()
        self.successes.clear()
        return out

    def __len__(self) -> int:
        return len(self.rewards)


class RolloutWorker:
    """Steps n_envs copies with the current policy and assembles batches."""

    def __init__(
        self,
        envs: list[MultiAgentEnv],
        policy: MultiAgentPolicy,
        cfg: RolloutConfig,
        seed: int,
    ) -> None:
        if len(envs) != cfg.n_envs:
            raise ValueError(f"got {len(envs)} envs for n_envs={cfg.n_envs}")
        self.envs = envs
        self.policy = policy
        self.cfg = cfg
        ss = np.random.SeedSequence(seed)
        children = ss.spawn(1 + cfg.n_envs)
        self.action_rng = np.random.default_rng(children[0])
        self.results: list[StepResult] = [
            env.reset(seed=int(child.generate_state(1)[0]))
            for env, child in zip(envs, children[1:])
        ]
        spec = envs[0].spec
        self.n_agents = spec.n_agents
        self.pools = (
            [MessagePool(spec.n_agents, policy.settings.comm_config.d_m) for _ in envs]
            if policy.comm is not None
            else []
        )
        self.global_step = 0
        self.stats = EpisodeStats()
        self._ep_reward = np.zeros(cfg.n_envs)
        self._ep_length = np.zeros(cfg.n_envs, dtype=np.int64)
        self.last_tags: Array | None = None

    # -- one policy evaluation over all envs ----------------------------------

    def _act(self, obs: Array, masks: Array) -> tuple[Array, Array]:
        """Two-phase communication then sampling; (E, n) actions and log-probs."""
        e, n, d = obs.shape
        flat_obs = obs.reshape(e * n, d)
        with no_grad():
            if self.policy.comm is not None:
                comm = self.policy.comm
                cfg = self.policy.settings.comm_config
                payloads = comm.encode(constant(flat_obs)).data
                raw = comm.raw_weights(constant(flat_obs)).data.reshape(e, n)
                for i, pool in enumerate(self.pools):
                    pool.write_batch(payloads[i * n:(i + 1) * n], self.global_step)
                pooled = np.stack([pool.payload_matrix() for pool in self.pools])
                selection = schedule_batch(raw, cfg.k)
                msgs = pooled[np.arange(e)[:, None, None], selection]
                z = comm.fuse(constant(flat_obs), constant(msgs.reshape(e * n, cfg.k, cfg.d_m)))
                logits = self.policy.actor.logits(constant(flat_obs), z).data
            else:
                logits = self.policy.actor.logits(constant(flat_obs)).data
        dist = CategoricalDist(logits, masks.reshape(e * n, -1))
        actions, logp = dist.sample(self.action_rng)
        return actions.reshape(e, n), logp.reshape(e, n)

    # -- collection -------------------------------------------------------------

    def collect(self, train_cfg: TrainConfig) -> TrajectoryBatch:
        t_len, e, n = self.cfg.steps_per_update, self.cfg.n_envs, self.n_agents
        spec = self.envs[0].spec
        obs_buf = np.zeros((t_len, e, n, spec.obs_dim))
        state_buf = np.zeros((t_len, e, spec.state_layout.flat_width))
        mask_buf = np.zeros((t_len, e, n, spec.n_actions), dtype=bool)
        action_buf = np.zeros((t_len, e, n), dtype=np.int64)
        logp_buf = np.zeros((t_len, e, n))
        reward_buf = np.zeros((t_len, e, n))
        value_buf = np.zeros((t_len + 1, e, n))
        done_buf = np.zeros((t_len, e), dtype=bool)
        trunc_value_buf = np.zeros((t_len, e, n))
        tags = np.zeros((t_len, e, n), dtype=np.int64)

        for t in range(t_len):
            obs = np.stack([r.obs for r in self.results])
            if not np.isfinite(obs).all():
                raise RuntimeError("non-finite observation in rollout")
            states = np.stack([r.state for r in self.results])
            masks = np.stack([r.masks for r in self.results])
            obs_buf[t] = obs
            state_buf[t] = states
            mask_buf[t] = masks

            actions, logp = self._act(obs, masks)
            action_buf[t] = actions
            logp_buf[t] = logp
            value_buf[t] = self.policy.compute_values(states, obs)
            if self.pools:
                tags[t] = np.stack([p.step_tags() for p in self.pools])

            new_results = []
            truncated_idx = []
            for i, env in enumerate(self.envs):
                res = env.step(actions[i])
                reward_buf[t, i] = res.rewards
                done_buf[t, i] = res.done
                self._ep_reward[i] += res.rewards[0]
                self._ep_length[i] += 1
                if res.done:
                    self.stats.add(float(self._ep_reward[i]), int(self._ep_length[i]), res.success)
                    self._ep_reward[i] = 0.0
                    self._ep_length[i] = 0
                    if res.truncated:
                        truncated_idx.append((i, res))
                    res = env.reset()
                new_results.append(res)
            if truncated_idx and self.cfg.bootstrap:
                term_states = np.stack([r.state for _, r in truncated_idx])
                term_obs = np.stack([r.obs for _, r in truncated_idx])
                term_values = self.policy.compute_values(term_states, term_obs)
                for row, (i, _) in enumerate(truncated_idx):
                    trunc_value_buf[t, i] = term_values[row]
            self.results = new_results
            self.global_step += 1

        if self.cfg.bootstrap:
            obs_now = np.stack([r.obs for r in self.results])
            states_now = np.stack([r.state for r in self.results])
            value_buf[t_len] = self.policy.compute_values(states_now, obs_now)
        self.last_tags = tags if self.pools else None

        advantages = gae(
            reward_buf,
            value_buf,
            done_buf[:, :, None],
            train_cfg.gamma,
            train_cfg.gae_lambda,
            truncation_values=trunc_value_buf,
        )
        returns = advantages + value_buf[:-1]
        b = t_len * e
        return TrajectoryBatch(
            obs=obs_buf.reshape(b, n, spec.obs_dim),
            states=state_buf.reshape(b, spec.state_layout.flat_width),
            actions=action_buf.reshape(b, n),
            logp_old=logp_buf.reshape(b, n),
            rewards=reward_buf.reshape(b, n),
            values_old=value_buf[:-1].reshape(b, n),
            dones=done_buf.reshape(b),
            masks=mask_buf.reshape(b, n, spec.n_actions),
            advantages=advantages.reshape(b, n),
            returns=returns.reshape(b, n),
        )
