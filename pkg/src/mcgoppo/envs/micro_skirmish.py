"""MicroSkirmish: a small grid combat task against scripted enemies.

n agents fight m enemies.  Agents move, attack the nearest enemy within
range, or idle; enemies run a fixed heuristic (close on the nearest
living agent, strike when adjacent).  The team reward is damage dealt
minus damage taken plus a win bonus, scaled down to keep values small.
"""

from __future__ import annotations

import numpy as np

from ..policy import ObsLayout, StateLayout
from .base import EnvSpec, MultiAgentEnv, StepResult, norm_coord

Array = np.ndarray

NOOP, UP, DOWN, LEFT, RIGHT, ATTACK = range(6)
MOVES = np.array([[0, 0], [0, 1], [0, -1], [-1, 0], [1, 0], [0, 0]])
ACTION_NAMES = ("noop", "up", "down", "left", "right", "attack")

MAX_HP = 3
AGENT_RANGE = 2   # agents outrange the melee enemies
ENEMY_RANGE = 1
SIGHT = 4
WIN_BONUS = 5.0
REWARD_SCALE = 0.1


def make_spec(n_agents: int = 3, n_enemies: int = 3, grid: int = 6, t_max: int = 40) -> EnvSpec:
    obs_layout = ObsLayout(
        own=3,                       # x, y, hp
        allies=4 * (n_agents - 1),   # visible, dx, dy, hp
        enemies=4 * n_enemies,
        movement=5,                  # four move flags plus attack flag
        agent_id=n_agents,
    )
    row_width = 3 + n_agents         # x, y, hp, one-hot id
    enemy_width = 3 * n_enemies      # x, y, hp per enemy
    flat_width = n_agents * row_width + enemy_width
    state_layout = StateLayout(
        n_rows=n_agents,
        row_width=row_width,
        flat_width=flat_width,
        enemy_start=n_agents * row_width,
        enemy_stop=flat_width,
    )
    return EnvSpec(
        name="micro_skirmish",
        n_agents=n_agents,
        n_enemies=n_enemies,
        n_actions=6,
        action_names=ACTION_NAMES,
        obs_layout=obs_layout,
        state_layout=state_layout,
        t_max=t_max,
        reward_scale=REWARD_SCALE,
    )


def manhattan(a: Array, b: Array) -> int:
    return int(abs(a[0] - b[0]) + abs(a[1] - b[1]))


class MicroSkirmish(MultiAgentEnv):
    def __init__(self, n_agents: int = 3, n_enemies: int = 3, grid: int = 6,
                 t_max: int = 40) -> None:
        super().__init__()
        if n_agents < 1 or n_enemies < 1:
            raise ValueError("need at least one agent and one enemy")
        self.grid = grid
        self.spec = make_spec(n_agents, n_enemies, grid, t_max)
        n, m = n_agents, n_enemies
        self.agent_pos = np.zeros((n, 2), dtype=np.int64)
        self.enemy_pos = np.zeros((m, 2), dtype=np.int64)
        self.agent_hp = np.zeros(n, dtype=np.int64)
        self.enemy_hp = np.zeros(m, dtype=np.int64)
        self.t = 0
        self._done = True

    # -- episode control -----------------------------------------------------

    def reset(self, seed: int | None = None) -> StepResult:
        rng = self.seed_stream(seed)
        n, m = self.spec.n_agents, self.spec.n_enemies
        # agents spawn on the left band, enemies on the right band
        self.agent_pos[:, 0] = rng.integers(0, 2, size=n)
        self.agent_pos[:, 1] = rng.integers(0, self.grid, size=n)
        self.enemy_pos[:, 0] = rng.integers(self.grid - 2, self.grid, size=m)
        self.enemy_pos[:, 1] = rng.integers(0, self.grid, size=m)
        self.agent_hp[...] = MAX_HP
        self.enemy_hp[...] = MAX_HP
        self.t = 0
        self._done = False
        return self._result(reward=0.0, done=False, truncated=False, success=False)

    def step(self, joint_action: Array) -> StepResult:
        if self._done:
            raise RuntimeError("step() called on a finished episode")
        masks = self._masks()
        joint_action = self.check_legal(joint_action, masks)

        dealt = 0
        # all agents act from the pre-step world, then damage lands at once
        pending = np.zeros(self.spec.n_enemies, dtype=np.int64)
        for i, a in enumerate(joint_action):
            if self.agent_hp[i] == 0:
                continue
            if a == ATTACK:
                target = self._nearest(self.agent_pos[i], self.enemy_pos, self.enemy_hp)
                pending[target] += 1
            elif a != NOOP:
                target = self.agent_pos[i] + MOVES[a]
                if self._in_bounds(target):
                    self.agent_pos[i] = target
        dealt = int(np.minimum(pending, self.enemy_hp).sum())
        self.enemy_hp = np.maximum(self.enemy_hp - pending, 0)

        taken = self._enemy_phase()
        self.t += 1

        win = bool((self.enemy_hp == 0).all())
        lose = bool((self.agent_hp == 0).all())
        truncated = not (win or lose) and self.t >= self.spec.t_max
        done = win or lose or truncated
        self._done = done
        reward = dealt - taken + (WIN_BONUS if win else 0.0)
        return self._result(reward, done, truncated, success=win)

    def _enemy_phase(self) -> int:
        """Scripted opponents: strike an adjacent agent, else close distance."""
        taken = 0
        for e in range(self.spec.n_enemies):
            if self.enemy_hp[e] == 0:
                continue
            alive = np.flatnonzero(self.agent_hp > 0)
            if alive.size == 0:
                break
            target = self._nearest(self.enemy_pos[e], self.agent_pos, self.agent_hp)
            dist = manhattan(self.enemy_pos[e], self.agent_pos[target])
            if dist <= ENEMY_RANGE:
                if self.agent_hp[target] > 0:
                    self.agent_hp[target] -= 1
                    taken += 1
            else:
                self.enemy_pos[e] = self._approach(self.enemy_pos[e], self.agent_pos[target])
        return taken

    def _approach(self, src: Array, dst: Array) -> Array:
        """One step toward dst, larger axis gap first, x on ties."""
        dx, dy = int(dst[0] - src[0]), int(dst[1] - src[1])
        step = np.array([np.sign(dx), 0]) if abs(dx) >= abs(dy) else np.array([0, np.sign(dy)])
        out = src + step
        return out if self._in_bounds(out) else src

    def _nearest(self, origin: Array, positions: Array, hp: Array) -> int:
        """Index of the nearest living unit; distance ties go to the lowest index."""
        alive = np.flatnonzero(hp > 0)
        dists = [manhattan(origin, positions[u]) for u in alive]
        return int(alive[int(np.argmin(dists))])

    def _in_bounds(self, p: Array) -> bool:
        return bool(0 <= p[0] < self.grid and 0 <= p[1] < self.grid)

    # -- legality -------------------------------------------------------------

    def _masks(self) -> Array:
        n = self.spec.n_agents
        masks = np.zeros((n, 6), dtype=bool)
        masks[:, NOOP] = True
        for i in range(n):
            if self.agent_hp[i] == 0:
                continue  # dead units may only idle
            for a in (UP, DOWN, LEFT, RIGHT):
                if self._in_bounds(self.agent_pos[i] + MOVES[a]):
                    masks[i, a] = True
            masks[i, ATTACK] = self._enemy_in_range(i)
        return masks

    def _enemy_in_range(self, i: int) -> bool:
        alive = np.flatnonzero(self.enemy_hp > 0)
        return any(
            manhattan(self.agent_pos[i], self.enemy_pos[e]) <= AGENT_RANGE for e in alive
        )

    # -- featurization ----------------------------------------------------------

    def _unit_feature(self, viewer: int, pos: Array, hp: int) -> list[float]:
        dist = manhattan(self.agent_pos[viewer], pos)
        if hp == 0 or dist > SIGHT:
            return [0.0, 0.0, 0.0, 0.0]
        dx = (pos[0] - self.agent_pos[viewer, 0]) / self.grid
        dy = (pos[1] - self.agent_pos[viewer, 1]) / self.grid
        return [1.0, float(dx), float(dy), hp / MAX_HP]

    def _observations(self, masks: Array) -> Array:
        n, m = self.spec.n_agents, self.spec.n_enemies
        obs = np.zeros((n, self.spec.obs_dim))
        for i in range(n):
            own = [
                norm_coord(self.agent_pos[i, 0], self.grid),
                norm_coord(self.agent_pos[i, 1], self.grid),
                self.agent_hp[i] / MAX_HP,
            ]
            allies: list[float] = []
            for j in range(n):
                if j != i:
                    allies += self._unit_feature(i, self.agent_pos[j], int(self.agent_hp[j]))
            enemies: list[float] = []
            for e in range(m):
                enemies += self._unit_feature(i, self.enemy_pos[e], int(self.enemy_hp[e]))
            move = masks[i, 1:6].astype(np.float64)
            one_hot = np.zeros(n)
            one_hot[i] = 1.0
            obs[i] = np.concatenate([own, allies, enemies, move, one_hot])
        return obs

    def build_state(self) -> Array:
        """Agent rows (pos, hp, id) then the enemy segment (pos, hp each)."""
        n, m = self.spec.n_agents, self.spec.n_enemies
        rows = np.zeros((n, 3 + n))
        for i in range(n):
            rows[i, 0] = norm_coord(self.agent_pos[i, 0], self.grid)
            rows[i, 1] = norm_coord(self.agent_pos[i, 1], self.grid)
            rows[i, 2] = self.agent_hp[i] / MAX_HP
            rows[i, 3 + i] = 1.0
        enemy = np.zeros(3 * m)
        for e in range(m):
            enemy[3 * e] = norm_coord(self.enemy_pos[e, 0], self.grid)
            enemy[3 * e + 1] = norm_coord(self.enemy_pos[e, 1], self.grid)
            enemy[3 * e + 2] = self.enemy_hp[e] / MAX_HP
        return np.concatenate([rows.reshape(-1), enemy])

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
