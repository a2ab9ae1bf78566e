"""Search -> discretize -> evaluate, plus ablations and random search.

Every entry point writes into an output directory:

    config.ini                    fully resolved config (its SHA-256 is the hash)
    record.json                   ExperimentRecord
    search/seed{S}/metrics.csv    supernet training curve
    search/seed{S}/alpha_log.jsonl
    search/seed{S}/checkpoint.npz
    cells/NNN.json, cells/NNN.dot distinct discrete cells in discovery order
    eval/seed{S}/metrics.csv      discrete network training curves
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..discretize import cell_from_json, cell_to_dot, cell_to_json, discretize, dumps_cells, load_alpha_log, loads_cells
from ..rl import NaNAbort, RunResult, evaluate_cell, save_checkpoint, train, write_metrics_csv
from ..rl.train import CellScore
from ..searchspace import DiscreteCell, builtin_opset, sample_random_cell
from ..supernet import AlphaSnapshot, build_baseline_encoder, build_discrete_network, build_supernet
from .config import RunConfig, config_hash, parse_config

log = logging.getLogger("rldarts")

CellPair = tuple[DiscreteCell, "DiscreteCell | None"]


@dataclass
class ExperimentRecord:
    config_hash: str
    phase: str
    status: str = "ok"
    failure: str | None = None
    search: list[dict] = field(default_factory=list)
    cells: list[dict] = field(default_factory=list)
    chosen_cell: dict | None = None
    eval: dict | None = None
    random_search: dict | None = None
    ablation: dict | None = None
    evolution: list[dict] | None = None
    analysis: dict | None = None
    budget: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentRecord":
        return cls(**d)

    def save(self, out: Path) -> None:
        (out / "record.json").write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def load_record(out) -> tuple[ExperimentRecord, RunConfig]:
    """Load a record and its stored config, checking the stored hash."""
    out = Path(out)
    rec = ExperimentRecord.from_json(json.loads((out / "record.json").read_text()))
    text = (out / "config.ini").read_text()
    if config_hash(text) != rec.config_hash:
        raise ValueError(f"{out}: config.ini does not match the recorded hash")
    return rec, parse_config(text, str(out / "config.ini"))


def prepare_out(cfg: RunConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.canonical_text())
    return out


def _steps_for(cfg: RunConfig, budget: int) -> int:
    """Env steps a run with ``budget`` actually takes (PPO rounds up to whole rollouts)."""
    if budget <= 0:
        return 0
    if cfg.run.algorithm == "ppo":
        per = cfg.ppo.n_envs * cfg.ppo.rollout
        return math.ceil(budget / per) * per
    per = cfg.dqn.n_envs
    return math.ceil(budget / per) * per


# ------------------------------------------------------------------ phases

def write_alpha_log(snapshots: Sequence[AlphaSnapshot], path) -> None:
    with open(path, "w") as fh:
        for s in snapshots:
            fh.write(json.dumps(s.to_json(), sort_keys=True) + "\n")


def search_phase(cfg: RunConfig, out: Path, rec: ExperimentRecord) -> list[RunResult]:
    results = []
    for seed in cfg.run.search_seeds:
        d = out / "search" / f"seed{seed}"
        d.mkdir(parents=True, exist_ok=True)
        log.info("search seed %d: %d steps", seed, cfg.run.search_budget)
        res = train(cfg.run.algorithm, lambda s: build_supernet(cfg.supernet, s), cfg.env, cfg.rl,
                    cfg.run.search_budget, seed, out_dir=d, final_eval_episodes=cfg.run.final_eval_episodes)
        write_metrics_csv(res.metrics, d / "metrics.csv")
        write_alpha_log(res.snapshots, d / "alpha_log.jsonl")
        save_checkpoint(d / "checkpoint.npz", res.agent, step=res.steps)
        rec.search.append({"seed": seed, "steps": res.steps, "final_return": res.final_return,
                           "test_return": res.test_return,
                           "metrics": str((d / "metrics.csv").relative_to(out)),
                           "alpha_log": str((d / "alpha_log.jsonl").relative_to(out))})
        results.append(res)
    return results


def distinct_pairs(normal: Sequence[AlphaSnapshot], reduction: Sequence[AlphaSnapshot] | None,
                   K: int, merge: str) -> list[tuple[int, CellPair]]:
    """Distinct (normal, reduction) cells along the α trajectory."""
    red_by_step = {s.step: s for s in reduction or ()}
    seq: list[tuple[int, CellPair]] = []
    for snap in normal:
        pair = (discretize(snap, K, merge),
                discretize(red_by_step[snap.step], K, merge) if reduction else None)
        if not seq or seq[-1][1] != pair:
            seq.append((snap.step, pair))
    return seq


def cells_from_log(path, cfg: RunConfig) -> list[tuple[int, CellPair]]:
    normal = load_alpha_log(path, "normal")
    reduction = load_alpha_log(path, "reduction") if cfg.supernet.R > 0 else None
    return distinct_pairs(normal, reduction, cfg.supernet.K, cfg.supernet.merge)


def discretize_phase(cfg: RunConfig, out: Path, rec: ExperimentRecord,
                     online: Sequence[AlphaSnapshot] | None = None) -> CellPair:
    """Distinct cells of the first search seed, and the cell at ``discretize_step``."""
    alpha_log = out / rec.search[0]["alpha_log"]
    seq = cells_from_log(alpha_log, cfg)
    if online is not None:
        by_role = {r: [s for s in online if s.role == r] for r in ("normal", "reduction")}
        live = distinct_pairs(by_role["normal"], by_role["reduction"] if cfg.supernet.R > 0 else None,
                              cfg.supernet.K, cfg.supernet.merge)
        if live != seq:
            raise RuntimeError("online and offline discretization disagree")
    cells_dir = out / "cells"
    cells_dir.mkdir(exist_ok=True)
    rec.cells = []
    for n, (step, (normal, reduction)) in enumerate(seq):
        stem = f"{n:03d}"
        (cells_dir / f"{stem}.json").write_text(dumps_cells(normal, reduction))
        dot = cell_to_dot(normal, f"normal_{stem}")
        if reduction is not None:
            dot += cell_to_dot(reduction, f"reduction_{stem}")
        (cells_dir / f"{stem}.dot").write_text(dot)
        rec.cells.append({"index": n, "step": step, "normal": cell_to_json(normal),
                          "reduction": cell_to_json(reduction) if reduction else None,
                          "path": f"cells/{stem}.json"})
    target = cfg.run.discretize_step
    eligible = [c for c in rec.cells if target < 0 or c["step"] <= target]
    chosen = eligible[-1] if eligible else rec.cells[0]
    rec.chosen_cell = chosen
    return _pair_from_entry(chosen)


def _pair_from_entry(entry: dict) -> CellPair:
    red = entry.get("reduction")
    return cell_from_json(entry["normal"]), (cell_from_json(red) if red else None)


def _write_eval_metrics(out: Path, sub: str, score: CellScore) -> None:
    for res in score.results:
        d = out / sub / f"seed{res.seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(res.metrics, d / "metrics.csv")


def eval_phase(cfg: RunConfig, out: Path, rec: ExperimentRecord, cell: CellPair, sub: str = "eval") -> CellScore:
    normal, reduction = cell
    log.info("eval %s at depths %s", normal, cfg.run.eval_depths)
    score = evaluate_cell(normal, cfg.eval_supernet, cfg.env, cfg.rl, cfg.run.eval_budget, cfg.run.eval_seeds,
                          cfg.run.algorithm, reduction, cfg.run.workers)
    _write_eval_metrics(out, sub, score)
    return score


def _fail(rec: ExperimentRecord, exc: NaNAbort, out: Path) -> ExperimentRecord:
    rec.status = "failed"
    rec.failure = f"nan_abort: {exc}"
    rec.save(out)
    return rec


# -------------------------------------------------------------- pipelines

def run_search(cfg: RunConfig, out) -> ExperimentRecord:
    out = prepare_out(cfg, out)
    rec = ExperimentRecord(cfg.hash, "search")
    rec.budget = {"search_steps_per_seed": _steps_for(cfg, cfg.run.search_budget)}
    try:
        results = search_phase(cfg, out, rec)
    except NaNAbort as exc:
        return _fail(rec, exc, out)
    discretize_phase(cfg, out, rec, results[0].snapshots)
    rec.save(out)
    return rec


def run_pipeline(cfg: RunConfig, out, cell: CellPair | None = None) -> ExperimentRecord:
    """Supernet search, discretization and fresh-weight evaluation.

    With ``cell`` (or ``[run] cell`` pointing at a cell file) the first two
    phases are skipped.
    """
    out = prepare_out(cfg, out)
    rec = ExperimentRecord(cfg.hash, "pipeline" if cell is None and not cfg.run.cell else "eval")
    if cell is None and cfg.run.cell:
        cell = loads_cells(Path(cfg.run.cell).read_text())
    try:
        if cell is None:
            results = search_phase(cfg, out, rec)
            cell = discretize_phase(cfg, out, rec, results[0].snapshots)
            rec.budget["search_steps_per_seed"] = _steps_for(cfg, cfg.run.search_budget)
        else:
            rec.chosen_cell = {"index": -1, "step": -1, "normal": cell_to_json(cell[0]),
                               "reduction": cell_to_json(cell[1]) if cell[1] else None, "path": cfg.run.cell}
        score = eval_phase(cfg, out, rec, cell)
    except NaNAbort as exc:
        return _fail(rec, exc, out)
    rec.eval = {**score.to_json(), "seeds": list(cfg.run.eval_seeds), "depths": list(cfg.run.eval_depths)}
    rec.save(out)
    return rec


def run_random_search(cfg: RunConfig, out) -> ExperimentRecord:
    """Random cells under a matched env-step budget, best one re-evaluated.

    The cell count is the cost ratio: each candidate gets one search-phase
    budget, so candidates together use ``cost_ratio`` times the supernet's
    steps.
    """
    out = prepare_out(cfg, out)
    rec = ExperimentRecord(cfg.hash, "random-search")
    rng = np.random.default_rng(cfg.run.random_seed)
    opset = builtin_opset(cfg.supernet.normal_opset)
    ropset = builtin_opset(cfg.supernet.reduction_opset) if cfg.supernet.R > 0 else None
    topo = cfg.supernet.topology
    seed = cfg.run.search_seeds[0]
    candidates = []
    total = 0
    try:
        for n in range(cfg.run.cost_ratio):
            normal = sample_random_cell(rng, opset, topo, cfg.supernet.merge)
            reduction = sample_random_cell(rng, ropset, topo, cfg.supernet.merge) if ropset else None
            score = evaluate_cell(normal, cfg.supernet, cfg.env, cfg.rl, cfg.run.search_budget, (seed,),
                                  cfg.run.algorithm, reduction)
            _write_eval_metrics(out, f"random/{n:03d}", score)
            total += sum(r.steps for r in score.results)
            candidates.append({"index": n, "normal": cell_to_json(normal),
                               "reduction": cell_to_json(reduction) if reduction else None,
                               "score": score.mean})
        expected = _steps_for(cfg, cfg.run.search_budget) * cfg.run.cost_ratio
        if total != expected:
            raise RuntimeError(f"budget parity violated: {total} random-search steps vs {expected}")
        best = max(candidates, key=lambda c: (c["score"], -c["index"]))
        score = eval_phase(cfg, out, rec, _pair_from_entry(best))
    except NaNAbort as exc:
        return _fail(rec, exc, out)
    rec.random_search = {"candidates": candidates, "best": best["index"]}
    rec.chosen_cell = best
    rec.eval = {**score.to_json(), "seeds": list(cfg.run.eval_seeds), "depths": list(cfg.run.eval_depths)}
    rec.budget = {"supernet_steps": _steps_for(cfg, cfg.run.search_budget), "random_search_steps": total,
                  "cost_ratio": cfg.run.cost_ratio}
    rec.save(out)
    return rec


def ablation_config(cfg: RunConfig, kind: str) -> RunConfig:
    if kind == "uniform_alpha":
        return cfg.replace(supernet={"trainable_alpha": False})
    if kind == "norelu_space":
        return cfg.replace(supernet={"normal_opset": "classic_normal_norelu"})
    if kind in ("pure_conv3x3", "pure_conv5x5"):
        return cfg
    raise ValueError(f"unknown ablation {kind!r}")


def run_ablation(cfg: RunConfig, out, kind: str | None = None) -> ExperimentRecord:
    """Supernet ablations rerun the search; baseline ablations train IMPALA
    encoders that differ only in kernel size."""
    kind = kind or cfg.run.ablation
    acfg = ablation_config(cfg, kind)
    out = prepare_out(acfg, out)
    rec = ExperimentRecord(acfg.hash, "ablate")
    try:
        if kind in ("uniform_alpha", "norelu_space"):
            results = search_phase(acfg, out, rec)
            discretize_phase(acfg, out, rec, results[0].snapshots)
            scores = [r.final_return for r in results]
        else:
            variant = kind.split("_", 1)[1]
            scores = []
            for seed in acfg.run.eval_seeds:
                res = train(acfg.run.algorithm,
                            lambda s: build_baseline_encoder(acfg.run.eval_depths, variant,
                                                             acfg.supernet.input_shape, acfg.supernet.feature_dim, s),
                            acfg.env, acfg.rl, acfg.run.eval_budget, seed)
                d = out / "baseline" / f"seed{seed}"
                d.mkdir(parents=True, exist_ok=True)
                write_metrics_csv(res.metrics, d / "metrics.csv")
                scores.append(res.final_return)
    except NaNAbort as exc:
        return _fail(rec, exc, out)
    rec.ablation = {"kind": kind, "scores": scores, "mean": float(np.mean(scores)), "std": float(np.std(scores))}
    rec.save(out)
    return rec


def cell_evolution_study(out, every: int | None = None) -> list[dict]:
    """Train every ``every``-th distinct cell of a record from scratch, in discovery order."""
    out = Path(out)
    rec, cfg = load_record(out)
    every = every or cfg.run.evolution_every
    if not rec.cells:
        raise ValueError("record has no distinct cells")
    rows = []
    for entry in rec.cells[::every]:
        score = eval_phase(cfg, out, rec, _pair_from_entry(entry), sub=f"evolution/{entry['index']:03d}")
        rows.append({"index": entry["index"], "step": entry["step"], **score.to_json()})
    rec.evolution = rows
    rec.save(out)
    return rows
