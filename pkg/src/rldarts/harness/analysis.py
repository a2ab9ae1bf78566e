"""Supernet-vs-cell correlation and the Jacobian-covariance architecture score."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..diffcore import ops
from ..diffcore.tensor import ConfigurationError, Tensor, backward
from ..envs import EnvConfig
from ..supernet import Network


@dataclass
class Correlation:
    games: list[str]
    supernet: np.ndarray
    cell: np.ndarray
    r: float
    excluded: list[str]


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0:
        raise ConfigurationError("Pearson correlation undefined for a constant vector")
    return float((dx * dy).sum() / denom)


def correlation_analysis(rows: Sequence[tuple[str, float, float, float]]) -> Correlation:
    """Rows are ``(game, supernet_score, cell_score, baseline_score)``.

    Both scores are divided by the baseline score; games with a zero
    baseline are dropped with a warning.
    """
    kept, excluded = [], []
    for game, sup, cell, base in rows:
        if base == 0:
            warnings.warn(f"{game}: baseline score is 0, excluded from correlation", stacklevel=2)
            excluded.append(game)
            continue
        kept.append((game, sup / base, cell / base))
    if len(kept) < 3:
        raise ConfigurationError(f"correlation needs at least 3 games, have {len(kept)}")
    games = [k[0] for k in kept]
    s = np.array([k[1] for k in kept])
    c = np.array([k[2] for k in kept])
    return Correlation(games, s, c, pearson(s, c), excluded)


def jacobian_covariance_score(jacobian_rows, eps: float = 1e-5) -> float:
    """``-sum_i [log(s_i + eps) + 1 / (s_i + eps)]`` over eigenvalues ``s`` of
    the correlation matrix of the rows."""
    J = np.asarray(jacobian_rows, dtype=np.float64)
    if J.ndim != 2 or J.shape[0] < 2:
        raise ConfigurationError(f"need a (B >= 2, F) matrix, got shape {J.shape}")
    if np.any(J.std(axis=1) == 0):
        raise ConfigurationError("a Jacobian row has zero variance; correlation undefined")
    corr = np.corrcoef(J)
    sigma = np.linalg.eigvalsh(corr)
    return float(-np.sum(np.log(sigma + eps) + 1.0 / (sigma + eps)))


def jacobian_rows(net: Network, obs: np.ndarray) -> np.ndarray:
    """Per-input gradients of the summed encoder output.

    Samples do not interact inside the encoder, so one backward pass of the
    batch sum yields every row.
    """
    x = Tensor(np.asarray(obs), requires_grad=True)
    y = net(x)
    backward(ops.sum(y))
    return x.grad.reshape(len(obs), -1).astype(np.float64)


def probe_batch(env: EnvConfig, size: int = 32, seed: int = 0, policy=None) -> np.ndarray:
    """Observations from uniformly random actions, or from ``policy(obs) -> action``."""
    rng = np.random.default_rng([seed, 31])
    e = env.make(seed + 50_000)
    obs = e.reset()
    out = []
    while len(out) < size:
        out.append(obs)
        a = int(rng.integers(e.spec.n_actions)) if policy is None else int(policy(obs))
        obs, _, done = e.step(a)
        if done:
            obs = e.reset()
    return np.stack(out)
