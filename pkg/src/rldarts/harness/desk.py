"""Desk-scale end-to-end study: trainable vs uniform α, final cell vs random
cells, and the ReLU / no-ReLU Classic spaces.

Each job lives in its own directory and is skipped when a finished record
with the same config hash is already there, so an interrupted study resumes
where it stopped.
"""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from ..discretize import cell_to_json, dumps_cells
from ..searchspace import builtin_opset, sample_random_cell
from ..supernet import SupernetConfig
from .config import RunConfig, RunSection
from .pipeline import ExperimentRecord, _pair_from_entry, ablation_config, run_ablation, run_pipeline, run_search

log = logging.getLogger("rldarts")

N_RANDOM_CELLS = 10


def micro_config(search_budget=200_000, eval_budget=100_000, seeds=(0, 1, 2)) -> RunConfig:
    return RunConfig(
        run=RunSection(phase="search", game="chase", level_mode="infinite", search_seeds=tuple(seeds),
                       eval_seeds=tuple(seeds), search_budget=search_budget, eval_budget=eval_budget,
                       eval_depths=(16, 16)),
        supernet=SupernetConfig(N=2, R=0, I=4, K=2, D=2, depths=(8, 8), normal_opset="micro"),
    )


def classic_config(search_budget=200_000, seeds=(0, 1, 2)) -> RunConfig:
    # cells run after a pooled stem at 12x12: full-resolution Classic cells
    # do not fit this machine's memory at minibatch 256
    return RunConfig(
        run=RunSection(phase="search", game="chase", level_mode="infinite", search_seeds=tuple(seeds),
                       eval_seeds=tuple(seeds), search_budget=search_budget, eval_depths=(16,)),
        supernet=SupernetConfig(N=1, R=1, I=4, K=2, D=1, depths=(8,), normal_opset="classic_normal",
                                reduction_opset="classic_reduction", stem_pool=True),
    )


def _cached(out: Path, cfg: RunConfig) -> ExperimentRecord | None:
    path = out / "record.json"
    if not path.exists():
        return None
    rec = ExperimentRecord.from_json(json.loads(path.read_text()))
    if rec.config_hash != cfg.hash or rec.status != "ok":
        return None
    return rec


def _job(name: str, root: Path, cfg: RunConfig, fn, timings: dict,
         effective: RunConfig | None = None) -> ExperimentRecord:
    out = root / name
    rec = _cached(out, effective or cfg)
    if rec is None:
        log.info("desk job %s starting", name)
        t0 = time.time()
        rec = fn(cfg, out)
        timings[name] = round(time.time() - t0, 1)
        if rec.status != "ok":
            raise RuntimeError(f"desk job {name} failed: {rec.failure}")
    return rec


def _search_scores(rec: ExperimentRecord) -> list[float]:
    return [s["final_return"] for s in rec.search]


def desk_experiment(root="runs/desk", search_budget=200_000, eval_budget=100_000,
                    seeds=(0, 1, 2), n_random=N_RANDOM_CELLS) -> dict:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    timings_path = root / "timings.json"
    timings = json.loads(timings_path.read_text()) if timings_path.exists() else {}

    def checkpoint():
        timings_path.write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")

    micro = micro_config(search_budget, eval_budget, seeds)
    trainable = _job("micro_trainable", root, micro, run_search, timings)
    checkpoint()
    uniform_cfg = micro.replace(run={"phase": "ablate", "ablation": "uniform_alpha"})
    uniform = _job("micro_uniform", root, uniform_cfg, lambda c, o: run_ablation(c, o, "uniform_alpha"), timings,
                   ablation_config(uniform_cfg, "uniform_alpha"))
    checkpoint()

    final_pair = _pair_from_entry(trainable.chosen_cell)
    final_dir = root / "final_cell"
    final_dir.mkdir(exist_ok=True)
    (final_dir / "cell.json").write_text(dumps_cells(*final_pair))
    final_cfg = micro.replace(run={"phase": "eval", "cell": str(final_dir / "cell.json")})
    final = _job("final_cell", root, final_cfg, lambda c, o: run_pipeline(c, o, final_pair), timings)
    checkpoint()

    rng = np.random.default_rng(2024)
    opset, topo = builtin_opset("micro"), micro.supernet.topology
    random_scores = []
    random_cells = []
    for n in range(n_random):
        cell = sample_random_cell(rng, opset, topo, micro.supernet.merge)
        d = root / "random_cells" / f"{n:03d}"
        d.mkdir(parents=True, exist_ok=True)
        (d / "cell.json").write_text(dumps_cells(cell))
        rcfg = micro.replace(run={"phase": "eval", "cell": str(d / "cell.json"), "eval_seeds": (seeds[0],)})
        rec = _job(f"random_cells/{n:03d}", root, rcfg, lambda c, o, cell=cell: run_pipeline(c, o, (cell, None)),
                   timings)
        checkpoint()
        random_scores.append(rec.eval["mean"])
        random_cells.append(cell_to_json(cell))

    classic = classic_config(search_budget, seeds)
    relu = _job("classic_relu", root, classic, run_search, timings)
    checkpoint()
    norelu_cfg = classic.replace(run={"phase": "ablate", "ablation": "norelu_space"})
    norelu = _job("classic_norelu", root, norelu_cfg, lambda c, o: run_ablation(c, o, "norelu_space"), timings,
                  ablation_config(norelu_cfg, "norelu_space"))
    checkpoint()

    t_scores, u_scores = _search_scores(trainable), uniform.ablation["scores"]
    r_scores, n_scores = _search_scores(relu), norelu.ablation["scores"]
    summary = {
        "trainable_alpha": t_scores,
        "uniform_alpha": u_scores,
        "final_cell": final.eval["scores"],
        "final_cell_json": final.chosen_cell["normal"],
        "random_cells": random_scores,
        "random_cells_json": random_cells,
        "classic_relu": r_scores,
        "classic_norelu": n_scores,
        "checks": {
            "a_trainable_beats_uniform": bool(np.mean(t_scores) > np.mean(u_scores)),
            "b_final_cell_at_least_random": bool(np.mean(final.eval["scores"]) >= np.mean(random_scores)),
            "c_norelu_underperforms_relu": bool(np.mean(n_scores) < np.mean(r_scores)),
        },
        "timings_seconds": timings,
        "total_seconds": round(sum(timings.values()), 1),
    }
    (root / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
