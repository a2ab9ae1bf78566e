"""Reinforcement learning loops that train encoders, supernets included."""

from .agents import ActorCritic, DuelingQNet
from .losses import (
    double_dqn_target,
    dqn_loss,
    dueling_q,
    gae_advantages,
    n_step_return,
    normalize_advantages,
    ppo_loss,
)
from .replay import NStepFolder, ReplayBuffer, Transition
from .train import (
    METRIC_COLUMNS,
    CellScore,
    DqnConfig,
    MetricsRow,
    NaNAbort,
    PpoConfig,
    RandomSearchResult,
    RunResult,
    alpha_max_dev,
    evaluate_cell,
    evaluate_policy,
    load_checkpoint,
    random_search,
    read_metrics_csv,
    save_checkpoint,
    train,
    write_metrics_csv,
)

__all__ = [
    "METRIC_COLUMNS", "ActorCritic", "CellScore", "DqnConfig", "DuelingQNet", "MetricsRow", "NStepFolder",
    "NaNAbort", "PpoConfig", "RandomSearchResult", "ReplayBuffer", "RunResult", "Transition",
    "alpha_max_dev", "double_dqn_target", "dqn_loss", "dueling_q", "evaluate_cell", "evaluate_policy",
    "gae_advantages", "load_checkpoint", "n_step_return", "normalize_advantages", "ppo_loss",
    "random_search", "read_metrics_csv", "save_checkpoint", "train", "write_metrics_csv",
]
