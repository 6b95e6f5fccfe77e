"""Configuration, orchestration, results and the ``p4sim`` command line."""
from .config import ConfigError, ExperimentConfig, apply_overrides, from_dict, load_config
from .experiment import RunResult, random_grouping_ablation, run_experiment
from .results import emit_results

__all__ = ["ConfigError", "ExperimentConfig", "RunResult", "apply_overrides", "emit_results",
           "from_dict", "load_config", "random_grouping_ablation", "run_experiment"]
