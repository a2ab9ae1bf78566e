"""Uniform ring-buffer replay and per-environment n-step folding."""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..diffcore.tensor import ConfigurationError


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool
    discount: float = 1.0
    logp_old: float = 0.0
    v_old: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.r):
            raise ConfigurationError(f"non-finite reward {self.r}")


class ReplayBuffer:
    """Fixed-capacity ring of n-step transitions.

    Writes and reads take a lock, so one writer and many readers may share
    it; ``len`` is updated under the same lock. Observations are stored as
    float16, which is exact for the built-in games' palettes.
    """

    def __init__(self, capacity: int, obs_shape, n_actions: int, seed: int = 0,
                 obs_dtype=np.float16):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be >= 1")
        self.capacity = capacity
        self.n_actions = n_actions
        self.obs = np.zeros((capacity, *obs_shape), dtype=obs_dtype)
        self.next_obs = np.zeros_like(self.obs)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.returns = np.zeros(capacity)
        self.discounts = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.rng = np.random.default_rng(seed)
        self._next = 0
        self._size = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return self._size

    def add(self, t: Transition) -> None:
        if not 0 <= t.a < self.n_actions:
            raise ConfigurationError(f"action {t.a} out of range")
        with self._lock:
            k = self._next
            self.obs[k] = t.s
            self.next_obs[k] = t.s_next
            self.actions[k] = t.a
            self.returns[k] = t.r
            self.discounts[k] = t.discount
            self.dones[k] = t.done
            self._next = (k + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, batch: int) -> np.ndarray:
        with self._lock:
            size = self._size
            if batch > size:
                raise ConfigurationError(f"cannot sample {batch} from {size} transitions")
            return self.rng.choice(size, size=batch, replace=False)

    def sample(self, batch: int, dtype=np.float32) -> dict:
        idx = self.sample_indices(batch)
        with self._lock:
            return {
                "obs": self.obs[idx].astype(dtype),
                "next_obs": self.next_obs[idx].astype(dtype),
                "actions": self.actions[idx],
                "returns": self.returns[idx],
                "discounts": self.discounts[idx],
                "dones": self.dones[idx],
            }


class NStepFolder:
    """Turns a single environment's 1-step stream into n-step transitions."""

    def __init__(self, n: int, gamma: float):
        if n < 1:
            raise ConfigurationError("n_step must be >= 1")
        self.n, self.gamma = n, gamma
        self.window: deque = deque()

    def push(self, s, a, r, s_next, done) -> list[Transition]:
        self.window.append((s, a, r))
        out = []
        if done:
            while self.window:
                out.append(self._emit(s_next, True))
                self.window.popleft()
        elif len(self.window) == self.n:
            out.append(self._emit(s_next, False))
            self.window.popleft()
        return out

    def _emit(self, s_next, done) -> Transition:
        s, a, _ = self.window[0]
        g, disc = 0.0, 1.0
        for _, _, r in self.window:
            g += disc * r
            disc *= self.gamma
        return Transition(s, int(a), g, s_next, done, discount=disc)
