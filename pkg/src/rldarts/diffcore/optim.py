"""Adam over a fixed, ordered list of parameters."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Parameter


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, lr_scale: dict[int, float] | None = None):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        # per-parameter multiplier, keyed by position in ``params``
        self.lr_scale = lr_scale or {}
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            m, v = self.m[i], self.v[i]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            lr = self.lr * self.lr_scale.get(i, 1.0)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.t = state["t"]
        self.m = [a.copy() for a in state["m"]]
        self.v = [a.copy() for a in state["v"]]


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    total = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))
    if max_norm is None or max_norm <= 0 or total <= max_norm:
        return list(grads), total
    scale = max_norm / (total + 1e-6)
    return [g * scale for g in grads], total
