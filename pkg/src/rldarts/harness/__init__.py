"""Pipeline orchestration, ablations, analysis, plots and the CLI."""

from .analysis import correlation_analysis, jacobian_covariance_score, jacobian_rows, pearson, probe_batch
from .config import ABLATIONS, PHASES, RunConfig, RunSection, config_hash, load_config, parse_config
from .pipeline import (
    ExperimentRecord,
    ablation_config,
    cell_evolution_study,
    load_record,
    run_ablation,
    run_pipeline,
    run_random_search,
    run_search,
)

__all__ = [
    "ABLATIONS", "PHASES", "ExperimentRecord", "RunConfig", "RunSection", "ablation_config",
    "cell_evolution_study", "config_hash", "correlation_analysis", "jacobian_covariance_score",
    "jacobian_rows", "load_config", "load_record", "parse_config", "pearson", "probe_batch",
    "run_ablation", "run_pipeline", "run_random_search", "run_search",
]
