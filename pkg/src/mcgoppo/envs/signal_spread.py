"""SignalSpread: a communication-required goal-finding grid world.

Agent 0 (the speaker) sees the goal cell but may never stand on it; the
remaining agents (listeners) can move anywhere but do not see the goal.
The team is rewarded when a listener reaches the goal, so above-chance
play requires the speaker to communicate the goal's location.
"""

from __future__ import annotations

import numpy as np

from ..policy import ObsLayout, StateLayout
from .base import EnvSpec, MultiAgentEnv, StepResult, norm_coord

Array = np.ndarray

STAY, UP, DOWN, LEFT, RIGHT = range(5)
MOVES = np.array([[0, 0], [0, 1], [0, -1], [-1, 0], [1, 0]])
ACTION_NAMES = ("stay", "up", "down", "left", "right")


def make_spec(n_agents: int = 2, grid: int = 5, t_max: int = 5) -> EnvSpec:
    # own: x, y, goal_x, goal_y, goal_visible; no ally/enemy segments
    obs_layout = ObsLayout(own=5, allies=0, enemies=0, movement=4, agent_id=n_agents)
    row_width = 2 + n_agents
    flat_width = n_agents * row_width + 2  # rows then the goal cell
    state_layout = StateLayout(
        n_rows=n_agents,
        row_width=row_width,
        flat_width=flat_width,
        enemy_start=flat_width,
        enemy_stop=flat_width,
    )
    return EnvSpec(
        name="signal_spread",
        n_agents=n_agents,
        n_enemies=0,
        n_actions=5,
        action_names=ACTION_NAMES,
        obs_layout=obs_layout,
        state_layout=state_layout,
        t_max=t_max,
    )


class SignalSpread(MultiAgentEnv):
    def __init__(self, n_agents: int = 2, grid: int = 5, t_max: int = 5) -> None:
        super().__init__()
        if n_agents < 2:
            raise ValueError("need a speaker and at least one listener")
        if grid < 2:
            raise ValueError("grid must be at least 2x2")
        self.grid = grid
        self.spec = make_spec(n_agents, grid, t_max)
        self.pos = np.zeros((n_agents, 2), dtype=np.int64)
        self.goal = np.zeros(2, dtype=np.int64)
        self.t = 0
        self._done = True

    # -- world construction ----------------------------------------------------

    def reset(self, seed: int | None = None) -> StepResult:
        rng = self.seed_stream(seed)
        n = self.spec.n_agents
        cells = self.grid * self.grid
        self.pos = np.stack(divmod(rng.integers(0, cells, size=n), self.grid), axis=1)
        # the goal never spawns on the speaker (who may not enter it) nor on
        # a listener (instant success would be free reward)
        occupied = {tuple(p) for p in self.pos}
        free = [c for c in range(cells) if divmod(c, self.grid) not in occupied]
        self.goal = np.array(divmod(int(rng.choice(free)), self.grid), dtype=np.int64)
        self.t = 0
        self._done = False
        return self._result(reward=0.0, done=False, truncated=False, success=False)

    # -- dynamics ----------------------------------------------------------------

    def step(self, joint_action: Array) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode")
        masks = self._masks()
        joint_action = self.check_legal(joint_action, masks)
        for i, a in enumerate(joint_action):
            target = self.pos[i] + MOVES[a]
            if self._in_bounds(target):
                self.pos[i] = target
        self.t += 1
        success = any(
            np.array_equal(self.pos[i], self.goal) for i in range(1, self.spec.n_agents)
        )
        truncated = not success and self.t >= self.spec.t_max
        done = success or truncated
        self._done = done
        reward = (1.0 if success else 0.0) - 0.01
        return self._result(reward, done, truncated, success)

    def _in_bounds(self, p: Array) -> bool:
        return bool(0 <= p[0] < self.grid and 0 <= p[1] < self.grid)

    def _masks(self) -> Array:
        n = self.spec.n_agents
        masks = np.ones((n, 5), dtype=bool)
        for i in range(n):
            for a in (UP, DOWN, LEFT, RIGHT):
                target = self.pos[i] + MOVES[a]
                if not self._in_bounds(target):
                    masks[i, a] = False
                elif i == 0 and np.array_equal(target, self.goal):
                    masks[i, a] = False  # the speaker may not enter the goal
        return masks

    # -- featurization -----------------------------------------------------------

    def _observations(self, masks: Array) -> Array:
        n = self.spec.n_agents
        obs = np.zeros((n, self.spec.obs_dim))
        for i in range(n):
            x = norm_coord(self.pos[i, 0], self.grid)
            y = norm_coord(self.pos[i, 1], self.grid)
            if i == 0:
                gx = norm_coord(self.goal[0], self.grid)
                gy = norm_coord(self.goal[1], self.grid)
                own = [x, y, gx, gy, 1.0]
            else:
                own = [x, y, 0.0, 0.0, -1.0]
            move = masks[i, 1:5].astype(np.float64)
            one_hot = np.zeros(n)
            one_hot[i] = 1.0
            obs[i] = np.concatenate([own, move, one_hot])
        return obs

    def build_state(self) -> Array:
        """Ground-truth rows (pos, id) per agent, then the goal cell."""
        n = self.spec.n_agents
        rows = np.zeros((n, 2 + n))
        for i in range(n):
            rows[i, 0] = norm_coord(self.pos[i, 0], self.grid)
            rows[i, 1] = norm_coord(self.pos[i, 1], self.grid)
            rows[i, 2 + i] = 1.0
        goal = [norm_coord(self.goal[0], self.grid), norm_coord(self.goal[1], self.grid)]
        return np.concatenate([rows.reshape(-1), goal])

    def _result(self, reward: float, done: bool, truncated: bool, success: bool) -> StepResult:
        masks = self._masks()
        return StepResult(
            obs=self._observations(masks),
            state=self.build_state(),
            rewards=np.full(self.spec.n_agents, reward * self.spec.reward_scale),
            done=done,
            truncated=truncated,
            masks=masks,
            success=success,
        )
