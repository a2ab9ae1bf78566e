"""Procedural pixel games standing in for a Procgen-style benchmark.

Both games render a square grid to a 24x24x3 float image in [0, 1] and
share the action set up/down/left/right/stay. A *level* is everything the
level seed decides (layout, start positions, obstacle schedule). In
``finite(n)`` mode level seeds come from ``{0..n-1}``; in ``infinite`` mode
each reset draws a fresh seed from a range disjoint from any finite set.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIONS = ("up", "down", "left", "right", "stay")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))
INFINITE_SEED_LO = 2**31
INFINITE_SEED_HI = 2**62

WALL = (0.5, 0.5, 0.5)
AGENT = (0.0, 1.0, 0.0)
GOAL = (0.0, 0.0, 1.0)
OBSTACLE = (1.0, 0.0, 0.0)


class EnvError(RuntimeError):
    pass


@dataclass(frozen=True)
class GameSpec:
    name: str
    r_min: float
    r_max: float
    r_min_step: float
    r_max_step: float
    obs_shape: tuple[int, int, int] = (24, 24, 3)
    n_actions: int = len(ACTIONS)
    episode_cap: int = 128


GAMES = {
    "chase": GameSpec("chase", r_min=-12.8, r_max=10.0, r_min_step=-0.1, r_max_step=10.0),
    "dodge": GameSpec("dodge", r_min=0.0, r_max=12.8, r_min_step=0.0, r_max_step=0.1),
}


def game_spec(name: str) -> GameSpec:
    try:
        return GAMES[name]
    except KeyError:
        raise EnvError(f"unknown game {name!r}; choose from {sorted(GAMES)}") from None


@dataclass(frozen=True)
class LevelMode:
    kind: str = "infinite"
    n_levels: int = 0

    def __post_init__(self):
        if self.kind not in ("finite", "infinite"):
            raise EnvError(f"unknown level mode {self.kind!r}")
        if self.kind == "finite" and self.n_levels < 1:
            raise EnvError("finite level mode needs n_levels >= 1")

    @classmethod
    def parse(cls, text: "str | LevelMode") -> "LevelMode":
        if isinstance(text, LevelMode):
            return text
        text = text.strip()
        if text == "infinite":
            return cls("infinite")
        if text.startswith("finite(") and text.endswith(")"):
            return cls("finite", int(text[7:-1]))
        if text.startswith("finite:"):
            return cls("finite", int(text[7:]))
        raise EnvError(f"cannot parse level mode {text!r}")

    def __str__(self) -> str:
        return "infinite" if self.kind == "infinite" else f"finite({self.n_levels})"


def normalize_step_reward(r: float, spec: GameSpec) -> float:
    if not spec.r_max > 0:
        raise EnvError(f"{spec.name}: R_max must be > 0 to normalise rewards")
    return r / spec.r_max


def normalized_score(R: float, r_min: float, r_max: float) -> float:
    """``(R - R_min) / (R_max - R_min)``, deliberately not clipped."""
    if r_max == r_min:
        raise EnvError("R_max equals R_min")
    return (R - r_min) / (r_max - r_min)


def bfs_distance(walls: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> int | None:
    g = walls.shape[0]
    dist = {start: 0}
    q = deque([start])
    while q:
        cur = q.popleft()
        if cur == goal:
            return dist[cur]
        for dy, dx in _MOVES[:4]:
            ny, nx = cur[0] + dy, cur[1] + dx
            if 0 <= ny < g and 0 <= nx < g and not walls[ny, nx] and (ny, nx) not in dist:
                dist[(ny, nx)] = dist[cur] + 1
                q.append((ny, nx))
    return None


class GridGame:
    """Common reset/level/rendering logic. Subclasses define the rules."""

    spec: GameSpec

    def __init__(self, level_mode: LevelMode | str = "infinite", seed: int = 0, grid: int = 12,
                 wall_density: float = 0.08):
        self.level_mode = LevelMode.parse(level_mode)
        if self.spec.obs_shape[0] % grid:
            raise EnvError(f"grid {grid} does not divide observation size {self.spec.obs_shape[0]}")
        self.grid = grid
        self.px = self.spec.obs_shape[0] // grid
        self.wall_density = wall_density
        self.seed = seed
        self.level_rng = np.random.default_rng([seed, 0])
        self.dynamics_rng = np.random.default_rng([seed, 1])
        self.level_seed: int | None = None
        self.t = 0
        self.done = True

    def _next_level_seed(self) -> int:
        if self.level_mode.kind == "finite":
            return int(self.level_rng.integers(self.level_mode.n_levels))
        return int(self.level_rng.integers(INFINITE_SEED_LO, INFINITE_SEED_HI))

    def reset(self, level_seed: int | None = None) -> np.ndarray:
        self.level_seed = self._next_level_seed() if level_seed is None else int(level_seed)
        self._generate(np.random.default_rng([self.level_seed, _GAME_IDS[self.spec.name]]))
        self.t = 0
        self.done = False
        return self.render()

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        if not 0 <= int(action) < self.spec.n_actions:
            raise EnvError(f"action {action} out of range")
        self.t += 1
        reward, done = self._advance(int(action))
        if self.t >= self.spec.episode_cap:
            done = True
        self.done = done
        return self.render(), reward, done

    def _paint(self, img: np.ndarray, cell: tuple[int, int], color) -> None:
        y, x = cell[0] * self.px, cell[1] * self.px
        img[y:y + self.px, x:x + self.px] = color

    def _blank(self) -> np.ndarray:
        return np.zeros(self.spec.obs_shape, dtype=np.float32)

    def _move(self, pos: tuple[int, int], action: int, walls: np.ndarray | None = None) -> tuple[int, int]:
        dy, dx = _MOVES[action]
        ny, nx = pos[0] + dy, pos[1] + dx
        if not (0 <= ny < self.grid and 0 <= nx < self.grid):
            return pos
        if walls is not None and walls[ny, nx]:
            return pos
        return ny, nx

    def layout_hash(self) -> str:
        return hashlib.sha1(self._layout_bytes()).hexdigest()

    # subclass hooks
    def _generate(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def _advance(self, action: int) -> tuple[float, bool]:
        raise NotImplementedError

    def render(self) -> np.ndarray:
        raise NotImplementedError

    def _layout_bytes(self) -> bytes:
        raise NotImplementedError


class Chase(GridGame):
    """Walk to the goal through procedurally placed walls.

    -0.1 per step without reaching the goal, +10 on the step that reaches it.
    """

    spec = GAMES["chase"]

    def _generate(self, rng):
        g = self.grid
        while True:
            walls = rng.random((g, g)) < self.wall_density
            free = np.flatnonzero(~walls.reshape(-1))
            if free.size < 2:
                continue
            a, b = rng.choice(free, size=2, replace=False)
            agent, goal = divmod(int(a), g), divmod(int(b), g)
            if bfs_distance(walls, agent, goal) is not None:
                break
        self.walls, self.agent, self.goal = walls, agent, goal
        self._background = self._blank()
        for y, x in zip(*np.nonzero(walls)):
            self._paint(self._background, (int(y), int(x)), WALL)

    def _advance(self, action):
        self.agent = self._move(self.agent, action, self.walls)
        if self.agent == self.goal:
            return 10.0, True
        return -0.1, False

    def render(self):
        img = self._background.copy()
        self._paint(img, self.goal, GOAL)
        self._paint(img, self.agent, AGENT)
        return img

    def _layout_bytes(self):
        return self.walls.tobytes() + bytes(self.agent) + bytes(self.goal)

    def shortest_path_return(self) -> float:
        """Return of an optimal policy from the current start (oracle)."""
        d = bfs_distance(self.walls, self.agent, self.goal)
        if d is None or d > self.spec.episode_cap:
            return -0.1 * self.spec.episode_cap
        return 10.0 - 0.1 * (d - 1)


class Dodge(GridGame):
    """Avoid falling obstacles; +0.1 for each survived step, collision ends it.

    Obstacles enter on the top row and fall one cell per step. The spawn
    schedule and its rate jitter are drawn with the level, so a level plus
    an action sequence fixes the episode.
    """

    spec = GAMES["dodge"]
    spawn_rate = 0.12

    def _generate(self, rng):
        g = self.grid
        cap = self.spec.episode_cap
        rate = self.spawn_rate * (0.75 + 0.5 * rng.random())
        self.schedule = rng.random((cap + g, g)) < rate
        self.agent = (g - 1, int(rng.integers(g)))
        self.obstacles = np.zeros((g, g), dtype=bool)
        self.obstacles[0] = self.schedule[0]
        self.obstacles[self.agent] = False

    def _advance(self, action):
        self.agent = self._move(self.agent, action)
        if self.obstacles[self.agent]:
            return 0.0, True
        self.obstacles[1:] = self.obstacles[:-1]
        self.obstacles[0] = self.schedule[self.t]
        if self.obstacles[self.agent]:
            return 0.0, True
        return 0.1, False

    def render(self):
        img = self._blank()
        ys, xs = np.nonzero(self.obstacles)
        for y, x in zip(ys, xs):
            self._paint(img, (int(y), int(x)), OBSTACLE)
        self._paint(img, self.agent, AGENT)
        return img

    def _layout_bytes(self):
        return self.schedule.tobytes() + bytes(self.agent)


_GAME_IDS = {"chase": 1, "dodge": 2}
_CLASSES = {"chase": Chase, "dodge": Dodge}


def make_env(name: str, level_mode: LevelMode | str = "infinite", seed: int = 0, **kwargs) -> GridGame:
    if name not in _CLASSES:
        raise EnvError(f"unknown game {name!r}; choose from {sorted(_CLASSES)}")
    return _CLASSES[name](level_mode, seed, **kwargs)


class MultiGameEnv:
    """Each reset picks a game uniformly, then a level. Rewards are divided
    by the chosen game's R_max."""

    def __init__(self, names: Sequence[str], level_mode: LevelMode | str = "infinite", seed: int = 0,
                 **kwargs):
        if len(names) < 2:
            raise EnvError("multi-game env needs at least two games")
        self.envs = [make_env(n, level_mode, seed * 1000 + k, **kwargs) for k, n in enumerate(names)]
        shapes = {(e.spec.obs_shape, e.spec.n_actions) for e in self.envs}
        if len(shapes) != 1:
            raise EnvError(f"games disagree on observation/action shapes: {shapes}")
        base = self.envs[0].spec
        self.spec = GameSpec("+".join(names), r_min=0.0, r_max=1.0, r_min_step=-1.0, r_max_step=1.0,
                             obs_shape=base.obs_shape, n_actions=base.n_actions, episode_cap=base.episode_cap)
        self.game_rng = np.random.default_rng([seed, 7])
        self.current: GridGame | None = None
        self.current_index = -1
        self.level_mode = LevelMode.parse(level_mode)

    @property
    def done(self) -> bool:
        return self.current is None or self.current.done

    def reset(self) -> np.ndarray:
        self.current_index = int(self.game_rng.integers(len(self.envs)))
        self.current = self.envs[self.current_index]
        return self.current.reset()

    def step(self, action: int):
        if self.current is None:
            raise EnvError("reset() before step()")
        obs, r, done = self.current.step(action)
        return obs, normalize_step_reward(r, self.current.spec), done

    @property
    def game_name(self) -> str:
        return self.current.spec.name if self.current else ""


def multi_game_env(names: Sequence[str], seed: int = 0, level_mode="infinite", **kwargs) -> MultiGameEnv:
    return MultiGameEnv(names, level_mode, seed, **kwargs)


def make_any(game: str, level_mode="infinite", seed: int = 0, **kwargs):
    """``chase``, ``dodge`` or a ``+``-joined multi-game name."""
    names = [g for g in game.split("+") if g]
    if len(names) > 1:
        return MultiGameEnv(names, level_mode, seed, **kwargs)
    return make_env(names[0], level_mode, seed, **kwargs)


class VecEnv:
    """Synchronous batch of environments with auto-reset and episode tracking."""

    def __init__(self, factory, n: int):
        self.envs = [factory(k) for k in range(n)]
        self.spec = self.envs[0].spec
        self.obs = np.stack([e.reset() for e in self.envs])
        self.ep_return = np.zeros(n)
        self.ep_raw_return = np.zeros(n)
        self.completed: list[float] = []
        self.completed_by_game: dict[str, list[float]] = {}

    def __len__(self) -> int:
        return len(self.envs)

    def step(self, actions: np.ndarray):
        n = len(self.envs)
        rewards = np.zeros(n)
        dones = np.zeros(n, dtype=bool)
        next_obs = np.empty_like(self.obs)
        for k, (env, a) in enumerate(zip(self.envs, actions)):
            obs, r, done = env.step(int(a))
            rewards[k] = r
            self.ep_return[k] += r
            if done:
                dones[k] = True
                self.completed.append(float(self.ep_return[k]))
                game = getattr(env, "game_name", env.spec.name)
                self.completed_by_game.setdefault(game, []).append(float(self.ep_return[k]))
                self.ep_return[k] = 0.0
                obs = env.reset()
            next_obs[k] = obs
        # obs after auto-reset; terminal observations are not needed (done masks bootstrap)
        self.obs = next_obs
        return next_obs, rewards, dones

    def recent_mean_return(self, window: int = 50) -> float:
        if not self.completed:
            return float("nan")
        return float(np.mean(self.completed[-window:]))


def write_ppm(obs: np.ndarray, path: str | Path, scale: int = 8) -> None:
    img = np.clip(obs * 255.0, 0, 255).astype(np.uint8)
    img = img.repeat(scale, axis=0).repeat(scale, axis=1)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6 {w} {h} 255\n".encode())
        fh.write(img.tobytes())


@dataclass(frozen=True)
class EnvConfig:
    """How to build training and held-out evaluation environments."""

    game: str = "chase"
    level_mode: str = "infinite"
    test_level_mode: str = "infinite"
    grid: int = 12

    def __post_init__(self):
        for g in self.game.split("+"):
            game_spec(g)
        LevelMode.parse(self.level_mode)
        LevelMode.parse(self.test_level_mode)

    def make(self, seed: int, test: bool = False):
        mode = self.test_level_mode if test else self.level_mode
        return make_any(self.game, mode, seed, grid=self.grid)

    @property
    def games(self) -> list[str]:
        return self.game.split("+")
