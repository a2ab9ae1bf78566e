"""``rl-darts`` command line.

Exit codes: 0 success, 1 configuration error, 2 training aborted on NaN.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from ..diffcore.tensor import ConfigurationError
from ..discretize import CellFormatError, cell_to_dot, discretize, dumps_cells, load_alpha_log, loads_cells
from ..envs import EnvError, write_ppm
from ..searchspace import SearchSpaceError, builtin_opset, enumerate_cells, opset_space_size
from ..supernet import AlphaSnapshot, build_discrete_network
from .config import RunConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NAN = 0, 1, 2
log = logging.getLogger("rldarts")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        n_eval = len(cfg.run.eval_seeds)
        cfg = cfg.replace(run={"search_seeds": (args.seed,),
                               "eval_seeds": tuple(args.seed + k for k in range(n_eval))})
    return cfg


def _out(args, cfg: RunConfig, phase: str) -> Path:
    return Path(args.out) if args.out else Path("runs") / f"{phase}-{cfg.hash[:12]}"


def _report(rec, out: Path) -> int:
    print(json.dumps({"out": str(out), "status": rec.status, "config_hash": rec.config_hash,
                      "eval": rec.eval, "failure": rec.failure}, indent=2))
    return EXIT_OK if rec.status == "ok" else EXIT_NAN


def cmd_search(args) -> int:
    from .pipeline import run_search
    from .plots import emit_plots

    cfg = _config(args)
    out = _out(args, cfg, "search")
    rec = run_search(cfg, out)
    if rec.status == "ok":
        emit_plots(out)
    return _report(rec, out)


def _load_snapshot(path: Path, role: str, step: int | None) -> AlphaSnapshot:
    text = path.read_text()
    if path.suffix == ".jsonl":
        snaps = load_alpha_log(path, role)
        if not snaps:
            raise ConfigurationError(f"{path}: no {role} snapshots")
        if step is not None:
            snaps = [s for s in snaps if s.step <= step] or snaps[:1]
        return snaps[-1]
    try:
        return AlphaSnapshot.from_json(json.loads(text))
    except (ValueError, KeyError) as exc:
        raise ConfigurationError(f"{path}: not an alpha snapshot ({exc})") from None


def cmd_discretize(args) -> int:
    if args.alpha:
        snap = _load_snapshot(Path(args.alpha), args.role, args.step)
        cell = discretize(snap, args.topk, args.merge)
        text = dumps_cells(cell)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        if args.dot:
            Path(args.dot).write_text(cell_to_dot(cell, args.role))
        return EXIT_OK
    if not args.record:
        raise ConfigurationError("discretize needs --alpha FILE or --record DIR")
    from .pipeline import discretize_phase, load_record

    rec, cfg = load_record(args.record)
    discretize_phase(cfg, Path(args.record), rec)
    rec.save(Path(args.record))
    for c in rec.cells:
        print(f"{c['index']:03d} step={c['step']} {c['path']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import run_pipeline
    from .plots import emit_plots

    cfg = _config(args)
    cell = None
    if args.cell:
        cell = loads_cells(Path(args.cell).read_text())
        cfg = cfg.replace(run={"cell": str(args.cell)})
    out = _out(args, cfg, "eval")
    rec = run_pipeline(cfg, out, cell)
    if rec.status == "ok":
        emit_plots(out)
    if args.dump_frames and rec.status == "ok":
        _dump_frames(cfg, Path(args.dump_frames))
    return _report(rec, out)


def _dump_frames(cfg: RunConfig, d: Path, n: int = 16) -> None:
    d.mkdir(parents=True, exist_ok=True)
    env = cfg.env.make(cfg.run.eval_seeds[0], test=True)
    obs = env.reset()
    for t in range(n):
        write_ppm(obs, d / f"frame_{t:03d}.ppm")
        obs, _, done = env.step(t % env.spec.n_actions)
        if done:
            obs = env.reset()


def cmd_random_search(args) -> int:
    from .pipeline import run_random_search

    cfg = _config(args)
    out = _out(args, cfg, "random-search")
    return _report(run_random_search(cfg, out), out)


def cmd_ablate(args) -> int:
    from .pipeline import run_ablation

    cfg = _config(args)
    kind = args.kind or cfg.run.ablation
    out = _out(args, cfg, f"ablate-{kind}")
    rec = run_ablation(cfg, out, kind)
    print(json.dumps(rec.ablation, indent=2))
    return EXIT_OK if rec.status == "ok" else EXIT_NAN


def cmd_enumerate_space(args) -> int:
    cfg = _config(args)
    topo = cfg.supernet.topology
    rows = []
    names = [cfg.supernet.normal_opset] + ([cfg.supernet.reduction_opset] if cfg.supernet.R > 0 else [])
    total = 1
    for name in names:
        opset = builtin_opset(name)
        size = opset_space_size(opset, topo)
        total *= size
        row = {"opset": name, "O_nz": len(opset.nonzero), "I": topo.I, "K": topo.K, "cells": size}
        if args.verify and size <= args.limit:
            row["enumerated"] = len(enumerate_cells(opset, topo, cfg.supernet.merge, args.limit))
        rows.append(row)
    print(json.dumps({"spaces": rows, "product": total}, indent=2))
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import correlation_analysis, jacobian_covariance_score, jacobian_rows, probe_batch
    from .pipeline import _pair_from_entry, cell_evolution_study, load_record

    result = {}
    if args.scores:
        with open(args.scores, newline="") as fh:
            rows = [(r["game"], float(r["supernet"]), float(r["cell"]), float(r["baseline"]))
                    for r in csv.DictReader(fh)]
        corr = correlation_analysis(rows)
        result["correlation"] = {"games": corr.games, "supernet": corr.supernet.tolist(),
                                 "cell": corr.cell.tolist(), "pearson_r": corr.r, "excluded": corr.excluded}
    if args.record:
        out = Path(args.record)
        if args.evolution:
            result["evolution"] = cell_evolution_study(out, args.every)
        rec, cfg = load_record(out)
        policy = None
        if cfg.run.probe_source == "policy":
            policy = _policy_from_checkpoint(out, rec, cfg)
        probe = probe_batch(cfg.env, cfg.run.probe_size, cfg.run.search_seeds[0], policy)
        scores = []
        for entry in rec.cells:
            normal, reduction = _pair_from_entry(entry)
            net = build_discrete_network(cfg.eval_supernet, normal, reduction, seed=cfg.run.eval_seeds[0])
            scores.append({"index": entry["index"], "step": entry["step"],
                           "jacobian_score": jacobian_covariance_score(jacobian_rows(net, probe))})
        result["jacobian"] = scores
        rec.analysis = result
        rec.save(out)
    if not result:
        raise ConfigurationError("analyze needs --record DIR and/or --scores CSV")
    print(json.dumps(result, indent=2))
    return EXIT_OK


def _policy_from_checkpoint(out: Path, rec, cfg: RunConfig):
    import numpy as np

    from ..diffcore.tensor import Tensor, no_grad
    from ..rl import ActorCritic, load_checkpoint
    from ..supernet import build_supernet

    seed = rec.search[0]["seed"]
    agent = ActorCritic(build_supernet(cfg.supernet, seed), cfg.env.make(0).spec.n_actions, seed)
    load_checkpoint(out / "search" / f"seed{seed}" / "checkpoint.npz", agent)

    def policy(obs):
        with no_grad():
            logits, _ = agent(Tensor(obs[None]))
        return int(np.argmax(logits.data[0]))

    return policy


def cmd_plot(args) -> int:
    from .plots import emit_plots

    if not args.out:
        raise ConfigurationError("plot needs --out RECORD_DIR")
    for p in emit_plots(args.out):
        print(p)
    return EXIT_OK


def cmd_desk(args) -> int:
    from .desk import desk_experiment

    summary = desk_experiment(args.out or "runs/desk", args.search_budget, args.eval_budget,
                              tuple(args.seeds), args.random_cells)
    print(json.dumps(summary["checks"], indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rl-darts", description="Differentiable architecture search inside RL loops.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="INI run configuration")
        sp.add_argument("--seed", type=int, help="replace the configured seeds, starting at N")
        sp.add_argument("--out", help="output directory")
        return sp

    common(sub.add_parser("search", help="train a supernet and extract distinct cells")).set_defaults(fn=cmd_search)
    sp = common(sub.add_parser("discretize", help="discretize an alpha snapshot or a search record"))
    sp.add_argument("--alpha", help="snapshot JSON or alpha_log.jsonl")
    sp.add_argument("--record", help="search record directory to re-discretize")
    sp.add_argument("--topk", type=int, default=2)
    sp.add_argument("--merge", default="concat_conv1x1")
    sp.add_argument("--role", default="normal")
    sp.add_argument("--step", type=int, help="last snapshot at or before this step")
    sp.add_argument("--dot", help="also write a DOT diagram")
    sp.set_defaults(fn=cmd_discretize)
    sp = common(sub.add_parser("eval", help="full pipeline, or evaluation only with --cell"))
    sp.add_argument("--cell", help="cell JSON; skips search and discretization")
    sp.add_argument("--dump-frames", help="write a few PPM frames of the evaluation env here")
    sp.set_defaults(fn=cmd_eval)
    common(sub.add_parser("random-search", help="budget-matched random cell search")).set_defaults(
        fn=cmd_random_search)
    sp = common(sub.add_parser("ablate", help="run one ablation"))
    sp.add_argument("--kind", choices=("uniform_alpha", "norelu_space", "pure_conv3x3", "pure_conv5x5"))
    sp.set_defaults(fn=cmd_ablate)
    sp = common(sub.add_parser("enumerate-space", help="count (and optionally enumerate) cell spaces"))
    sp.add_argument("--verify", action="store_true", help="enumerate spaces below --limit")
    sp.add_argument("--limit", type=int, default=10**6)
    sp.set_defaults(fn=cmd_enumerate_space)
    sp = common(sub.add_parser("analyze", help="Jacobian scores, correlation, cell evolution"))
    sp.add_argument("--record", help="record directory")
    sp.add_argument("--scores", help="CSV with game,supernet,cell,baseline columns")
    sp.add_argument("--evolution", action="store_true", help="train every distinct cell")
    sp.add_argument("--every", type=int, help="evaluate every k-th distinct cell")
    sp.set_defaults(fn=cmd_analyze)
    common(sub.add_parser("plot", help="regenerate SVG plots for a record"), config=False).set_defaults(fn=cmd_plot)
    sp = common(sub.add_parser("desk", help="desk-scale end-to-end study"), config=False)
    sp.add_argument("--search-budget", type=int, default=200_000)
    sp.add_argument("--eval-budget", type=int, default=100_000)
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    sp.add_argument("--random-cells", type=int, default=10)
    sp.set_defaults(fn=cmd_desk)
    return p


def main(argv=None) -> int:
    from ..rl import NaNAbort

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.fn(args)
    except NaNAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigurationError, SearchSpaceError, CellFormatError, EnvError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
