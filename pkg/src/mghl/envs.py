"""Desk-scale grid environments with image-like observations.

Three regimes:
  * KeyDoor   — sparse two-stage task: find the key, open a distant door.
  * Collect   — dense pellet gathering.
  * ShiftGrid — Collect whose terrain re-themes every 50 steps, so large
                agent-independent pixel change happens periodically.

Observations are (3, size, size) float64 grids in [0, 1]: channel 0 terrain,
channel 1 agent, channel 2 items. Layout randomness is fixed by the reset
seed; the dynamics themselves are deterministic, so one (seed, action
sequence) pair always reproduces the same trajectory bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rewards import block_partition  # re-exported: partitioning lives with rewards

__all__ = [
    "ActionSet",
    "EnvStep",
    "GridEnv",
    "KeyDoorEnv",
    "CollectEnv",
    "ShiftGridEnv",
    "ACTIONS",
    "direction_of",
    "make_env",
    "scripted_optimal_action",
    "block_partition",
]


@dataclass(frozen=True)
class ActionSet:
    actions: tuple = (0, 1, 2, 3, 4)
    names: tuple = ("move-N", "move-S", "move-E", "move-W", "interact")
    direction_map: dict = field(default_factory=lambda: {
        0: "N", 1: "S", 2: "E", 3: "W", 4: "stay"})

    def __len__(self):
        return len(self.actions)


ACTIONS = ActionSet()

_DELTAS = {0: (-1, 0), 1: (1, 0), 2: (0, 1), 3: (0, -1)}

# terrain channel values
_WALL = 1.0
_DOOR_CLOSED = 0.75
# items channel values
_KEY = 1.0
_CARRIED_KEY = 0.5
_PELLET = 0.5


def direction_of(action_set, action):
    """Direction label for an action; interact maps to "stay"."""
    if action not in action_set.direction_map:
        raise ValueError(f"unknown action {action!r}")
    return action_set.direction_map[action]


@dataclass(frozen=True)
class EnvStep:
    obs: np.ndarray
    raw_ext_reward: float
    scaled_ext_reward: float
    done: bool

    def __post_init__(self):
        if self.scaled_ext_reward != self.raw_ext_reward / 100.0:
            raise ValueError("scaled reward must equal raw / 100")

    @classmethod
    def from_raw(cls, obs, raw, done):
        return cls(obs, float(raw), float(raw) / 100.0, done)


class GridEnv:
    """Common walls-and-movement machinery; subclasses add task logic."""

    name = "grid"

    def __init__(self, size=12, step_limit=300, seed=0):
        if size < 6:
            raise ValueError(f"grid size must be >= 6, got {size}")
        self.size = int(size)
        self.step_limit = int(step_limit)
        self._seed = int(seed)
        self.action_set = ACTIONS
        self._done = True
        self.steps = 0
        self.agent_pos = (1, 1)

    @property
    def obs_shape(self):
        return (3, self.size, self.size)

    @property
    def num_actions(self):
        return len(self.action_set)

    def reset(self, seed=None):
        if seed is not None:
            self._seed = int(seed)
        rng = np.random.default_rng(self._seed)
        self.steps = 0
        self._done = False
        self._build_layout(rng)
        return self._render()

    def step(self, action):
        if self._done:
            raise RuntimeError("step called after episode end; call reset")
        if action not in self.action_set.direction_map:
            raise ValueError(f"unknown action {action!r}")
        self.steps += 1
        raw = 0.0
        if action in _DELTAS:
            dr, dc = _DELTAS[action]
            r, c = self.agent_pos
            nr, nc = r + dr, c + dc
            if self._passable(nr, nc):
                self.agent_pos = (nr, nc)
            raw += self._on_enter()
        else:
            raw += self._on_interact()
        self._tick()
        done = self._task_done() or self.steps >= self.step_limit
        self._done = done
        return EnvStep.from_raw(self._render(), raw, done)

    # subclass hooks ------------------------------------------------------

    def _build_layout(self, rng):
        raise NotImplementedError

    def _task_done(self):
        return False

    def _on_enter(self):
        return 0.0

    def _on_interact(self):
        return 0.0

    def _tick(self):
        pass

    # shared helpers ------------------------------------------------------

    def _passable(self, r, c):
        return 1 <= r < self.size - 1 and 1 <= c < self.size - 1

    def _interior_cells(self):
        return [(r, c) for r in range(1, self.size - 1)
                for c in range(1, self.size - 1)]

    def _terrain(self):
        t = np.zeros((self.size, self.size))
        t[0, :] = t[-1, :] = _WALL
        t[:, 0] = t[:, -1] = _WALL
        return t

    def _render(self):
        obs = np.zeros(self.obs_shape)
        obs[0] = self._terrain()
        obs[1][self.agent_pos] = 1.0
        self._render_items(obs[2])
        return obs

    def _render_items(self, items):
        pass


class KeyDoorEnv(GridEnv):
    """Sparse task: interact on the key cell (+100 raw), then carry it to
    the door and interact there (+300 raw, episode ends). Key and door are
    at least 8 Manhattan steps apart so credit assignment spans a long
    stretch of the episode."""

    name = "keydoor"

    def _build_layout(self, rng):
        cells = self._interior_cells()
        start, key = [cells[i] for i in rng.choice(len(cells), size=2, replace=False)]
        dists = {c: abs(c[0] - key[0]) + abs(c[1] - key[1])
                 for c in cells if c not in (start, key)}
        # 8 Manhattan steps when the key's position allows it, else the
        # farthest cell still available
        need = min(8, max(dists.values()))
        far = [c for c, d in sorted(dists.items()) if d >= need]
        door = far[int(rng.integers(len(far)))]
        self.agent_pos = start
        self.start_pos = start
        self.key_pos = key
        self.door_pos = door
        self.has_key = False
        self.door_opened = False

    def _on_interact(self):
        if not self.has_key and self.agent_pos == self.key_pos:
            self.has_key = True
            return 100.0
        if self.has_key and self.agent_pos == self.door_pos:
            self.door_opened = True
            return 300.0
        return 0.0

    def _task_done(self):
        return self.door_opened

    @property
    def solved(self):
        return self.door_opened

    def _terrain(self):
        t = super()._terrain()
        if not self.door_opened:
            t[self.door_pos] = _DOOR_CLOSED
        return t

    def _render_items(self, items):
        if not self.has_key:
            items[self.key_pos] = _KEY
        elif not self.door_opened:
            items[self.agent_pos] = _CARRIED_KEY


class CollectEnv(GridEnv):
    """Dense task: walking onto a pellet collects it for +10 raw; episode
    ends when all pellets are gone or at the step limit."""

    name = "collect"

    def _num_pellets(self):
        return max(1, len(self._interior_cells()) // 10)

    def _build_layout(self, rng):
        cells = self._interior_cells()
        picks = rng.choice(len(cells), size=self._num_pellets() + 1, replace=False)
        self.agent_pos = cells[picks[0]]
        self.start_pos = self.agent_pos
        self.pellets = {cells[i] for i in picks[1:]}
        self.collected = 0

    def _on_enter(self):
        if self.agent_pos in self.pellets:
            self.pellets.discard(self.agent_pos)
            self.collected += 1
            return 10.0
        return 0.0

    def _task_done(self):
        return not self.pellets

    @property
    def solved(self):
        return not self.pellets

    def _render_items(self, items):
        for r, c in self.pellets:
            items[r, c] = _PELLET


class ShiftGridEnv(CollectEnv):
    """Collect with a terrain theme that shifts every 50 steps: every wall
    cell changes value at once, producing a burst of agent-independent
    pixel change."""

    name = "shiftgrid"

    _THEMES = (1.0, 0.8, 0.6, 0.4)

    def _build_layout(self, rng):
        super()._build_layout(rng)
        self.scene_id = 0

    def _tick(self):
        self.scene_id = self.steps // 50

    def _terrain(self):
        t = np.zeros((self.size, self.size))
        shade = self._THEMES[self.scene_id % len(self._THEMES)]
        t[0, :] = t[-1, :] = shade
        t[:, 0] = t[:, -1] = shade
        return t


_ENVS = {"keydoor": KeyDoorEnv, "collect": CollectEnv, "shiftgrid": ShiftGridEnv}

ENV_NAMES = tuple(sorted(_ENVS))


def make_env(name, size=12, step_limit=300, seed=0):
    cls = _ENVS.get(name)
    if cls is None:
        raise ValueError(f"unknown environment {name!r}; choose from "
                         f"{sorted(_ENVS)}")
    return cls(size=size, step_limit=step_limit, seed=seed)


def scripted_optimal_action(env):
    """Shortest-path action for KeyDoor: used as a learnability oracle and
    for reward-scale tests. Rooms have no interior obstacles, so greedy
    Manhattan movement is optimal."""
    if not isinstance(env, KeyDoorEnv):
        raise TypeError("scripted policy is defined for KeyDoor only")
    target = env.key_pos if not env.has_key else env.door_pos
    r, c = env.agent_pos
    tr, tc = target
    if (r, c) == target:
        return 4  # interact
    if r != tr:
        return 0 if tr < r else 1
    return 2 if tc > c else 3
