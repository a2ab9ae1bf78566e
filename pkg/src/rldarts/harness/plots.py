"""Deterministic SVG plots of α trajectories, training curves and cell evolution."""

from __future__ import annotations

import warnings
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..discretize import load_alpha_log  # noqa: E402
from ..rl import read_metrics_csv  # noqa: E402
from .pipeline import load_record  # noqa: E402

_RC = {"svg.hashsalt": "rl-darts", "svg.fonttype": "none", "font.size": 8}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def plot_alpha_trajectory(alpha_log, path, role: str = "normal") -> Path | None:
    snaps = load_alpha_log(alpha_log, role)
    if not snaps:
        return None
    edges = sorted(snaps[0].probs)
    ops = snaps[0].ops
    steps = [s.step for s in snaps]
    cols = min(4, len(edges))
    rows = -(-len(edges) // cols)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.0 * rows), squeeze=False, sharey=True)
        for ax, e in zip(axes.flat, edges):
            p = np.array([s.probs[e] for s in snaps])
            for k, name in enumerate(ops):
                ax.plot(steps, p[:, k], label=name, lw=1)
            ax.set_title(f"edge {e[0]}->{e[1]}")
            ax.set_ylim(0, 1)
        for ax in list(axes.flat)[len(edges):]:
            ax.axis("off")
        axes.flat[0].legend(fontsize=6, loc="upper left")
        fig.suptitle(f"{role} op weights")
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_training_curves(groups: dict[str, Sequence[Path]], path) -> Path | None:
    """One line per group: mean of ``mean_return`` across seeds, ±std band."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        drawn = False
        for label, files in sorted(groups.items()):
            runs = [read_metrics_csv(f) for f in files]
            runs = [r for r in runs if r]
            if not runs:
                continue
            n = min(len(r) for r in runs)
            steps = np.array([row.step for row in runs[0][:n]])
            vals = np.array([[row.mean_return for row in r[:n]] for r in runs])
            # rows logged before any episode finished are all-NaN; leave them as gaps
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mu = np.nanmean(vals, axis=0)
                sd = np.nanstd(vals, axis=0)
            ax.plot(steps, mu, label=label, lw=1.2)
            ax.fill_between(steps, mu - sd, mu + sd, alpha=0.25)
            drawn = True
        if not drawn:
            plt.close(fig)
            return None
        ax.set_xlabel("env steps")
        ax.set_ylabel("mean episodic return")
        ax.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_cell_evolution(rows: Sequence[dict], path) -> Path | None:
    if not rows:
        return None
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        x = np.arange(len(rows))
        ax.bar(x, [r["mean"] for r in rows], yerr=[r["std"] for r in rows], capsize=3, color="tab:blue")
        ax.set_xticks(x, [f"{r['index']}\n@{r['step']}" for r in rows])
        ax.set_xlabel("distinct cell (discovery step)")
        ax.set_ylabel("eval return")
        fig.tight_layout()
        return _save(fig, Path(path))


def emit_plots(out) -> list[Path]:
    """Write every plot a record supports into ``out/plots``."""
    out = Path(out)
    rec, cfg = load_record(out)
    pdir = out / "plots"
    pdir.mkdir(exist_ok=True)
    written: list[Path | None] = []
    if rec.search:
        first = out / rec.search[0]["alpha_log"]
        written.append(plot_alpha_trajectory(first, pdir / "alpha_normal.svg", "normal"))
        if cfg.supernet.R > 0:
            written.append(plot_alpha_trajectory(first, pdir / "alpha_reduction.svg", "reduction"))
    groups = {}
    for sub, label in (("search", "supernet"), ("eval", "discrete cell"), ("baseline", "baseline")):
        files = sorted((out / sub).glob("seed*/metrics.csv"))
        if files:
            groups[label] = files
    written.append(plot_training_curves(groups, pdir / "training_curves.svg"))
    if rec.evolution:
        written.append(plot_cell_evolution(rec.evolution, pdir / "cell_evolution.svg"))
    return [p for p in written if p is not None]
