"""Policy/value and dueling-Q heads on top of an encoder Network."""

from __future__ import annotations

import copy

import numpy as np

from ..diffcore import ops
from ..diffcore.tensor import Parameter, Tensor
from ..supernet import Dense, Network, ParamStore
from .losses import dueling_q


class _Agent:
    encoder: Network
    heads: ParamStore

    def parameters(self) -> list[Parameter]:
        """Weights first, then architecture logits (possibly empty)."""
        return self.encoder.parameters() + list(self.heads.params.values()) + self.encoder.arch_parameters()

    def weight_count(self) -> int:
        return len(self.encoder.parameters()) + len(self.heads.params)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = self.encoder.state_dict()
        state.update({k: p.data.copy() for k, p in self.heads.params.items()})
        return state

    def load_state_dict(self, state, strict: bool = True) -> None:
        self.encoder.load_state_dict({k: v for k, v in state.items() if k not in self.heads.params}, strict)
        for k, p in self.heads.params.items():
            p.data[...] = state[k]

    def features(self, obs: Tensor) -> Tensor:
        return ops.relu(self.encoder(obs))


class ActorCritic(_Agent):
    def __init__(self, encoder: Network, n_actions: int, seed: int = 0):
        self.encoder = encoder
        self.heads = ParamStore(np.random.default_rng([seed, 11]))
        self.pi = Dense(self.heads, "head/pi", encoder.feature_dim, n_actions)
        self.v = Dense(self.heads, "head/v", encoder.feature_dim, 1)
        # near-uniform initial policy
        self.pi.w.data *= 0.01

    def __call__(self, obs: Tensor) -> tuple[Tensor, Tensor]:
        f = self.features(obs)
        return self.pi(f), ops.reshape(self.v(f), (-1,))


class DuelingQNet(_Agent):
    def __init__(self, encoder: Network, n_actions: int, seed: int = 0):
        self.encoder = encoder
        self.heads = ParamStore(np.random.default_rng([seed, 12]))
        self.v = Dense(self.heads, "head/value", encoder.feature_dim, 1)
        self.a = Dense(self.heads, "head/adv", encoder.feature_dim, n_actions)

    def __call__(self, obs: Tensor) -> Tensor:
        f = self.features(obs)
        return dueling_q(f, self.v.w, self.a.w, self.v.b, self.a.b)

    def clone(self) -> "DuelingQNet":
        return copy.deepcopy(self)
