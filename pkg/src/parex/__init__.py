"""parex: protocol library and deterministic simulator for parallel,
asynchronous smart-contract execution with consensus/execution separation."""

from .config import ExperimentConfig, load_config
from .harness import run_experiment, sweep
from .membership import ThresholdFamily, group_failure_prob, min_group_size

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "ThresholdFamily",
    "group_failure_prob",
    "load_config",
    "min_group_size",
    "run_experiment",
    "sweep",
    "__version__",
]
