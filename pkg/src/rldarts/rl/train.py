"""PPO and DQN training loops over supernet, discrete or baseline encoders."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..diffcore import Adam, clip_grad_norm
from ..diffcore.tensor import ConfigurationError, NonFiniteError, Tensor, backward, no_grad
from ..envs import EnvConfig, VecEnv
from ..searchspace import DiscreteCell, sample_random_cell
from ..supernet import AlphaSnapshot, Network, SupernetConfig, build_discrete_network, snapshot_alpha
from .agents import ActorCritic, DuelingQNet
from .losses import gae_advantages, normalize_advantages, ppo_loss, dqn_loss
from .replay import NStepFolder, ReplayBuffer

METRIC_COLUMNS = ("step", "episodes", "mean_return", "loss_total", "loss_pi_or_td", "loss_v",
                  "entropy", "alpha_max_dev")


@dataclass
class PpoConfig:
    lr: float = 5e-4
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    c_v: float = 0.5
    c_h: float = 0.01
    n_envs: int = 16
    rollout: int = 128
    epochs: int = 3
    minibatch: int = 256
    max_grad_norm: float = 0.5
    alpha_lr_scale: float = 1.0
    snapshot_every: int = 100
    return_window: int = 50
    eval_episodes: int = 16

    def __post_init__(self):
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ConfigurationError("need gamma and lambda in (0, 1]")
        if not self.clip_eps > 0:
            raise ConfigurationError("clip epsilon must be > 0")
        if (self.n_envs * self.rollout) % self.minibatch:
            raise ConfigurationError("n_envs * rollout must be a multiple of minibatch")


@dataclass
class DqnConfig:
    lr: float = 1e-4
    gamma: float = 0.99
    n_step: int = 7
    batch: int = 64
    buffer: int = 20000
    learning_starts: int = 1000
    train_every: int = 4
    target_sync: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.2
    n_envs: int = 4
    max_grad_norm: float = 10.0
    huber_delta: float = 1.0
    alpha_lr_scale: float = 1.0
    snapshot_every: int = 100
    log_every: int = 2048
    return_window: int = 50
    eval_episodes: int = 16

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("need gamma in (0, 1]")
        if self.n_step < 1 or self.batch < 1:
            raise ConfigurationError("n_step and batch must be >= 1")


@dataclass
class MetricsRow:
    step: int
    episodes: int
    mean_return: float
    loss_total: float
    loss_pi_or_td: float
    loss_v: float
    entropy: float
    alpha_max_dev: float

    def as_list(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in METRIC_COLUMNS]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


def write_metrics_csv(rows: Sequence[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow(r.as_list())


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricsRow(int(r["step"]), int(r["episodes"]),
                       *(float(r[c]) for c in METRIC_COLUMNS[2:])) for r in rows]


class NaNAbort(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, step: int, cause: str, snapshots: list[AlphaSnapshot], dump_path: str | None = None):
        super().__init__(f"non-finite values at step {step}: {cause}")
        self.step, self.cause, self.snapshots, self.dump_path = step, cause, snapshots, dump_path


@dataclass
class RunResult:
    algorithm: str
    seed: int
    steps: int
    final_return: float
    episode_returns: list[float]
    metrics: list[MetricsRow]
    snapshots: list[AlphaSnapshot] = field(default_factory=list)
    returns_by_game: dict[str, list[float]] = field(default_factory=dict)
    test_return: float | None = None
    agent: object = field(default=None, repr=False, compare=False)

    def summary(self) -> dict:
        return {"algorithm": self.algorithm, "seed": self.seed, "steps": self.steps,
                "final_return": self.final_return, "test_return": self.test_return,
                "episodes": len(self.episode_returns)}


def alpha_max_dev(net: Network) -> float:
    dev = 0.0
    for a in net.arch.values():
        for p in a.probs_numpy().values():
            dev = max(dev, float(np.max(np.abs(p - 1.0 / p.size))))
    return dev


def _snapshots(net: Network, step: int) -> list[AlphaSnapshot]:
    return [snapshot_alpha(a, step) for a in net.arch.values()]


def _sample_actions(logits: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(len(z))[:, None] * cdf[:, -1:]
    a = np.minimum((cdf < u).sum(axis=1), z.shape[1] - 1)
    return a, logp[np.arange(len(a)), a]


def _resolve_network(network, seed: int) -> Network:
    if isinstance(network, Network):
        return network
    if callable(network):
        return network(seed)
    raise ConfigurationError(f"cannot build an encoder from {type(network).__name__}")


def _optimizer(agent, lr: float, alpha_scale: float) -> Adam:
    params = agent.parameters()
    n_w = agent.weight_count()
    scale = {i: alpha_scale for i in range(n_w, len(params))}
    return Adam(params, lr=lr, lr_scale=scale)


def _mean_tail(xs: Sequence[float], window: int) -> float:
    return float(np.mean(xs[-window:])) if len(xs) else float("nan")


def _dump_nan(out_dir, step: int, cause: str, snaps: list[AlphaSnapshot]) -> str | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / "nan_dump.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"step": step, "cause": cause, "alpha": [s.to_json() for s in snaps]},
                               indent=2, sort_keys=True))
    return str(path)


def evaluate_policy(agent, env: EnvConfig, episodes: int, seed: int, greedy: bool = False,
                    test: bool = True) -> list[float]:
    """Run ``episodes`` episodes in parallel, one per fresh environment."""
    if episodes <= 0:
        return []
    rng = np.random.default_rng([seed, 99])
    envs = [env.make(seed * 7919 + 10_000 + k, test=test) for k in range(episodes)]
    obs = np.stack([e.reset() for e in envs])
    live = np.ones(episodes, dtype=bool)
    totals = np.zeros(episodes)
    with no_grad():
        while live.any():
            idx = np.flatnonzero(live)
            out = agent(Tensor(obs[idx]))
            logits = (out[0] if isinstance(out, tuple) else out).data
            acts = np.argmax(logits, axis=1) if greedy else _sample_actions(logits, rng)[0]
            for k, a in zip(idx, acts):
                o, r, done = envs[k].step(int(a))
                totals[k] += r
                obs[k] = o
                if done:
                    live[k] = False
    return totals.tolist()


# --------------------------------------------------------------------- PPO

def train_ppo(network, env: EnvConfig, cfg: PpoConfig, budget: int, seed: int = 0,
              out_dir=None, log_fn: Callable[[MetricsRow], None] | None = None) -> RunResult:
    net = _resolve_network(network, seed)
    probe = env.make(0)
    agent = ActorCritic(net, probe.spec.n_actions, seed)
    opt = _optimizer(agent, cfg.lr, cfg.alpha_lr_scale)
    params = opt.params
    rng = np.random.default_rng([seed, 2])
    snaps = _snapshots(net, 0)
    rows: list[MetricsRow] = []

    if budget <= 0:
        rets = evaluate_policy(agent, env, cfg.eval_episodes, seed, test=False)
        row = MetricsRow(0, len(rets), _mean_tail(rets, len(rets) or 1), float("nan"), float("nan"),
                         float("nan"), float("nan"), alpha_max_dev(net))
        rows.append(row)
        if log_fn:
            log_fn(row)
        return RunResult("ppo", seed, 0, row.mean_return, rets, rows, snaps, agent=agent)

    venv = VecEnv(lambda k: env.make(seed * 1000 + k), cfg.n_envs)
    T, N = cfg.rollout, cfg.n_envs
    iterations = math.ceil(budget / (T * N))
    obs_buf = np.zeros((T, N, *venv.obs.shape[1:]), dtype=np.float32)
    act_buf = np.zeros((T, N), dtype=np.int64)
    logp_buf = np.zeros((T, N))
    val_buf = np.zeros((T, N))
    rew_buf = np.zeros((T, N))
    done_buf = np.zeros((T, N))
    steps = 0
    updates = 0
    for _ in range(iterations):
        with no_grad():
            for t in range(T):
                obs_buf[t] = venv.obs
                logits, v = agent(Tensor(venv.obs))
                a, lp = _sample_actions(logits.data, rng)
                act_buf[t], logp_buf[t], val_buf[t] = a, lp, v.data
                _, r, d = venv.step(a)
                rew_buf[t], done_buf[t] = r, d
            last_v = agent(Tensor(venv.obs))[1].data
        steps += T * N
        adv, ret = gae_advantages(rew_buf, val_buf, done_buf, cfg.gamma, cfg.lam, last_value=last_v)
        flat = T * N
        b_obs = obs_buf.reshape(flat, *obs_buf.shape[2:])
        b_act, b_logp = act_buf.reshape(flat), logp_buf.reshape(flat)
        b_adv, b_ret = adv.reshape(flat), ret.reshape(flat)
        acc = np.zeros(4)
        n_mb = 0
        for _epoch in range(cfg.epochs):
            perm = rng.permutation(flat)
            for lo in range(0, flat, cfg.minibatch):
                mb = perm[lo:lo + cfg.minibatch]
                opt.zero_grad()
                logits, v = agent(Tensor(b_obs[mb]))
                parts = ppo_loss(logits, v, b_act[mb], b_logp[mb], normalize_advantages(b_adv[mb]),
                                 b_ret[mb], cfg.clip_eps, cfg.c_v, cfg.c_h)
                loss_val = float(parts.total.data)
                try:
                    if not math.isfinite(loss_val):
                        raise NonFiniteError(f"loss is {loss_val}")
                    grads = backward(parts.total, params)
                except NonFiniteError as exc:
                    last = _snapshots(net, steps)
                    raise NaNAbort(steps, str(exc), last, _dump_nan(out_dir, steps, str(exc), last)) from None
                grads, _ = clip_grad_norm(grads, cfg.max_grad_norm)
                opt.step(grads)
                opt.zero_grad()
                updates += 1
                if net.arch and updates % cfg.snapshot_every == 0:
                    snaps.extend(_snapshots(net, steps))
                acc += (loss_val, -parts.clip, parts.value, parts.entropy)
                n_mb += 1
        acc /= max(n_mb, 1)
        row = MetricsRow(steps, len(venv.completed), _mean_tail(venv.completed, cfg.return_window),
                         acc[0], acc[1], acc[2], acc[3], alpha_max_dev(net))
        rows.append(row)
        if log_fn:
            log_fn(row)
    if net.arch and (not snaps or snaps[-1].step != steps):
        snaps.extend(_snapshots(net, steps))
    return RunResult("ppo", seed, steps, _mean_tail(venv.completed, cfg.return_window), list(venv.completed),
                     rows, snaps, dict(venv.completed_by_game), agent=agent)


# --------------------------------------------------------------------- DQN

def train_dqn(network, env: EnvConfig, cfg: DqnConfig, budget: int, seed: int = 0,
              out_dir=None, log_fn: Callable[[MetricsRow], None] | None = None) -> RunResult:
    net = _resolve_network(network, seed)
    probe = env.make(0)
    n_actions = probe.spec.n_actions
    online = DuelingQNet(net, n_actions, seed)
    target = online.clone()
    opt = _optimizer(online, cfg.lr, cfg.alpha_lr_scale)
    params = opt.params
    rng = np.random.default_rng([seed, 3])
    snaps = _snapshots(net, 0)
    rows: list[MetricsRow] = []

    if budget <= 0:
        rets = evaluate_policy(online, env, cfg.eval_episodes, seed, greedy=True, test=False)
        row = MetricsRow(0, len(rets), _mean_tail(rets, len(rets) or 1), float("nan"), float("nan"),
                         float("nan"), float("nan"), alpha_max_dev(net))
        rows.append(row)
        if log_fn:
            log_fn(row)
        return RunResult("dqn", seed, 0, row.mean_return, rets, rows, snaps, agent=online)

    venv = VecEnv(lambda k: env.make(seed * 1000 + k), cfg.n_envs)
    replay = ReplayBuffer(cfg.buffer, venv.obs.shape[1:], n_actions, seed=seed)
    folders = [NStepFolder(cfg.n_step, cfg.gamma) for _ in range(cfg.n_envs)]
    eps_steps = max(1, int(cfg.eps_fraction * budget))
    steps = since_update = since_sync = since_log = updates = 0
    acc, n_acc = np.zeros(2), 0
    while steps < budget:
        eps = cfg.eps_end + (cfg.eps_start - cfg.eps_end) * max(0.0, 1.0 - steps / eps_steps)
        with no_grad():
            q = online(Tensor(venv.obs)).data
        greedy = np.argmax(q, axis=1)
        explore = rng.random(cfg.n_envs) < eps
        actions = np.where(explore, rng.integers(n_actions, size=cfg.n_envs), greedy)
        prev = venv.obs
        nxt, r, d = venv.step(actions)
        for k in range(cfg.n_envs):
            for tr in folders[k].push(prev[k], actions[k], float(r[k]), nxt[k], bool(d[k])):
                replay.add(tr)
        steps += cfg.n_envs
        since_update += cfg.n_envs
        since_sync += cfg.n_envs
        since_log += cfg.n_envs
        while since_update >= cfg.train_every:
            since_update -= cfg.train_every
            if steps < cfg.learning_starts or len(replay) < cfg.batch:
                continue
            batch = replay.sample(cfg.batch)
            opt.zero_grad()
            parts = dqn_loss(batch, online, target, cfg.huber_delta)
            loss_val = float(parts.total.data)
            try:
                if not math.isfinite(loss_val):
                    raise NonFiniteError(f"loss is {loss_val}")
                grads = backward(parts.total, params)
            except NonFiniteError as exc:
                last = _snapshots(net, steps)
                raise NaNAbort(steps, str(exc), last, _dump_nan(out_dir, steps, str(exc), last)) from None
            grads, _ = clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(grads)
            opt.zero_grad()
            updates += 1
            if net.arch and updates % cfg.snapshot_every == 0:
                snaps.extend(_snapshots(net, steps))
            acc += (loss_val, parts.q_mean)
            n_acc += 1
        if since_sync >= cfg.target_sync:
            since_sync = 0
            target.load_state_dict(online.state_dict())
        if since_log >= cfg.log_every or steps >= budget:
            since_log = 0
            loss = acc[0] / n_acc if n_acc else float("nan")
            row = MetricsRow(steps, len(venv.completed), _mean_tail(venv.completed, cfg.return_window),
                             loss, loss, float("nan"), float("nan"), alpha_max_dev(net))
            acc, n_acc = np.zeros(2), 0
            rows.append(row)
            if log_fn:
                log_fn(row)
    if net.arch and (not snaps or snaps[-1].step != steps):
        snaps.extend(_snapshots(net, steps))
    return RunResult("dqn", seed, steps, _mean_tail(venv.completed, cfg.return_window), list(venv.completed),
                     rows, snaps, dict(venv.completed_by_game), agent=online)


def train(algorithm: str, network, env: EnvConfig, cfg, budget: int, seed: int = 0,
          out_dir=None, log_fn=None, final_eval_episodes: int = 0) -> RunResult:
    """Train ``network`` (a Network, or ``seed -> Network``) with PPO or DQN.

    Supernets get one optimizer over weights and architecture logits; frozen
    or absent logits are simply not in the parameter list.
    """
    if algorithm == "ppo":
        cfg = cfg if isinstance(cfg, PpoConfig) else PpoConfig(**(cfg or {}))
        res = train_ppo(network, env, cfg, budget, seed, out_dir, log_fn)
    elif algorithm == "dqn":
        cfg = cfg if isinstance(cfg, DqnConfig) else DqnConfig(**(cfg or {}))
        res = train_dqn(network, env, cfg, budget, seed, out_dir, log_fn)
    else:
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    if final_eval_episodes > 0:
        rets = evaluate_policy(res.agent, env, final_eval_episodes, seed, greedy=algorithm == "dqn", test=True)
        res.test_return = float(np.mean(rets))
    return res


# -------------------------------------------------------------- checkpoints

def save_checkpoint(path, agent, opt: Adam | None = None, step: int = 0,
                    rngs: dict[str, np.random.Generator] | None = None) -> None:
    arrays = {f"w/{k}": v for k, v in agent.state_dict().items()}
    meta = {"step": step, "rng": {k: g.bit_generator.state for k, g in (rngs or {}).items()}}
    if opt is not None:
        st = opt.state_dict()
        meta["opt_t"] = st["t"]
        for i, (m, v) in enumerate(zip(st["m"], st["v"])):
            arrays[f"opt/m/{i}"] = m
            arrays[f"opt/v/{i}"] = v
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, agent, opt: Adam | None = None,
                    rngs: dict[str, np.random.Generator] | None = None) -> dict:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        agent.load_state_dict({k[2:]: z[k] for k in z.files if k.startswith("w/")})
        if opt is not None and "opt_t" in meta:
            n = len(opt.params)
            opt.load_state_dict({"t": meta["opt_t"], "m": [z[f"opt/m/{i}"] for i in range(n)],
                                 "v": [z[f"opt/v/{i}"] for i in range(n)]})
    for k, g in (rngs or {}).items():
        if k in meta["rng"]:
            g.bit_generator.state = meta["rng"][k]
    return meta


# ------------------------------------------------------- cells and search

@dataclass
class CellScore:
    mean: float
    std: float
    scores: list[float]
    results: list[RunResult] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {"mean": self.mean, "std": self.std, "scores": list(self.scores)}


def _cell_job(args) -> RunResult:
    algorithm, net_cfg, normal, reduction, env, cfg, budget, seed = args
    res = train(algorithm, lambda s: build_discrete_network(net_cfg, normal, reduction, seed=s),
                env, cfg, budget, seed)
    res.agent = None
    return res


def evaluate_cell(cell: DiscreteCell, net_cfg: SupernetConfig, env: EnvConfig, cfg, budget: int,
                  seeds: Sequence[int] = (0, 1, 2), algorithm: str = "ppo",
                  reduction: DiscreteCell | None = None, workers: int = 1) -> CellScore:
    """Train the discrete network from fresh weights once per seed."""
    jobs = [(algorithm, net_cfg, cell, reduction, env, cfg, budget, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]
    scores = [r.final_return for r in results]
    return CellScore(float(np.mean(scores)), float(np.std(scores)), scores, results)


@dataclass
class RandomSearchResult:
    best_cell: DiscreteCell
    best_score: float
    candidates: list[tuple[DiscreteCell, float]]
    total_steps: int


def random_search(budget_cells: int, net_cfg: SupernetConfig, env: EnvConfig, cfg, budget: int,
                  rng: int | np.random.Generator = 0, seeds: Sequence[int] = (0,),
                  algorithm: str = "ppo", workers: int = 1) -> RandomSearchResult:
    """Sample ``budget_cells`` cells, train each for ``budget`` steps, keep the best."""
    if budget_cells < 1:
        raise ConfigurationError("random search needs a budget of at least one cell")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    from ..searchspace import builtin_opset

    opset = builtin_opset(net_cfg.normal_opset)
    ropset = builtin_opset(net_cfg.reduction_opset) if net_cfg.R > 0 else None
    candidates = []
    total = 0
    for _ in range(budget_cells):
        cell = sample_random_cell(rng, opset, net_cfg.topology, net_cfg.merge)
        red = sample_random_cell(rng, ropset, net_cfg.topology, net_cfg.merge) if ropset else None
        score = evaluate_cell(cell, net_cfg, env, cfg, budget, seeds, algorithm, red, workers)
        total += sum(r.steps for r in score.results)
        candidates.append((cell, score.mean))
    best = max(range(len(candidates)), key=lambda k: (candidates[k][1], -k))
    return RandomSearchResult(candidates[best][0], candidates[best][1], candidates, total)


def config_dict(cfg) -> dict:
    return asdict(cfg)
