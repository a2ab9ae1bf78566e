"""Advantage estimation and the PPO / dueling double-DQN objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import ops
from ..diffcore.tensor import ConfigurationError, Tensor, no_grad


def gae_advantages(rewards, values, dones, gamma: float, lam: float, last_value=None):
    """Generalised advantage estimation along axis 0.

    ``values`` holds one more entry than ``rewards`` (the bootstrap value)
    unless ``last_value`` is passed separately. ``dones[t]`` marks that the
    episode ended after step ``t``, cutting the bootstrap.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    if last_value is not None:
        values = np.concatenate([values, np.asarray(last_value, dtype=np.float64)[None]], axis=0)
    if values.shape[0] != T + 1 or dones.shape != rewards.shape or values.shape[1:] != rewards.shape[1:]:
        raise ConfigurationError(
            f"gae length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}"
        )
    if not (0 < gamma <= 1 and 0 <= lam <= 1):
        raise ConfigurationError(f"need gamma in (0,1] and lambda in [0,1], got {gamma}, {lam}")
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return adv, adv + values[:T]


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + eps)


@dataclass
class PpoLossParts:
    total: Tensor
    clip: float
    value: float
    entropy: float
    clip_frac: float
    approx_kl: float


def ppo_loss(logits: Tensor, values: Tensor, actions, logp_old, advantages, returns,
             clip_eps: float = 0.2, c_v: float = 0.5, c_h: float = 0.01) -> PpoLossParts:
    """``-(L_clip - c_v * L_vf + c_h * H)`` averaged over the batch."""
    if not clip_eps > 0:
        raise ConfigurationError("clip epsilon must be > 0")
    dtype = logits.data.dtype
    actions = np.asarray(actions, dtype=np.int64)
    adv = Tensor(np.asarray(advantages, dtype=dtype))
    logp_all = ops.log_softmax(logits)
    logp = ops.take_along(logp_all, actions)
    ratio = ops.exp(ops.sub(logp, Tensor(np.asarray(logp_old, dtype=dtype))))
    surr1 = ops.mul(ratio, adv)
    surr2 = ops.mul(ops.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
    l_clip = ops.mean(ops.minimum(surr1, surr2))
    v = ops.reshape(values, (-1,)) if values.ndim > 1 else values
    l_vf = ops.mean(ops.square(ops.sub(v, Tensor(np.asarray(returns, dtype=dtype)))))
    ent = ops.mean(ops.entropy_from_logits(logits))
    objective = ops.add(ops.sub(l_clip, ops.mul(l_vf, c_v)), ops.mul(ent, c_h))
    total = ops.mul(objective, -1.0)
    r = ratio.data
    return PpoLossParts(
        total,
        clip=float(l_clip.data),
        value=float(l_vf.data),
        entropy=float(ent.data),
        clip_frac=float(np.mean(np.abs(r - 1.0) > clip_eps)),
        approx_kl=float(np.mean(np.asarray(logp_old) - logp.data)),
    )


def dueling_q(features: Tensor, w_v: Tensor, w_a: Tensor, b_v: Tensor | None = None,
              b_a: Tensor | None = None) -> Tensor:
    """``Q = V + A - mean_a A`` with linear value and advantage streams."""
    v = ops.affine(features, w_v, b_v)
    a = ops.affine(features, w_a, b_a)
    a_mean = ops.reshape(ops.mean(a, axis=1), (-1, 1))
    return ops.add(v, ops.sub(a, a_mean))


def n_step_return(rewards, gamma: float) -> float:
    g = 0.0
    for r in reversed(list(rewards)):
        g = r + gamma * g
    return g


def double_dqn_target(returns_n, discounts, dones, q_next_online: np.ndarray,
                      q_next_target: np.ndarray) -> np.ndarray:
    """``R^(n) + gamma^n * Q_target(s', argmax_a Q_online(s', a)) * (1 - done)``."""
    best = np.argmax(q_next_online, axis=1)
    boot = q_next_target[np.arange(len(best)), best]
    return np.asarray(returns_n) + np.asarray(discounts) * boot * (1.0 - np.asarray(dones, dtype=np.float64))


@dataclass
class DqnLossParts:
    total: Tensor
    td: float
    q_mean: float


def dqn_loss(batch, online, target, huber_delta: float = 1.0) -> DqnLossParts:
    """Huber TD loss against the n-step double-DQN target.

    ``batch`` needs ``obs, actions, returns, next_obs, dones, discounts``;
    ``online`` / ``target`` map an observation Tensor to Q values.
    """
    dtype = np.dtype(batch["obs"].dtype) if batch["obs"].dtype in (np.float32, np.float64) else np.float32
    with no_grad():
        nxt = Tensor(np.asarray(batch["next_obs"], dtype=dtype))
        q_on = online(nxt).data
        q_tg = q_on if target is online else target(nxt).data
    y = double_dqn_target(batch["returns"], batch["discounts"], batch["dones"], q_on, q_tg)
    q = online(Tensor(np.asarray(batch["obs"], dtype=dtype)))
    q_sa = ops.take_along(q, batch["actions"])
    td = ops.sub(q_sa, Tensor(y.astype(q.data.dtype)))
    loss = ops.mean(ops.huber(td, huber_delta))
    return DqnLossParts(loss, td=float(loss.data), q_mean=float(q_sa.data.mean()))
