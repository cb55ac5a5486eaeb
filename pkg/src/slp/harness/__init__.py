"""Training, evaluation, sweep, and visualization harness."""

from .config import ConfigError, RunConfig, load_config, parse_config
from .evaluate import evaluate_model
from .sweep import run_sweep, sweep
from .training import RuntimeAbort, build_model, load_checkpoint, save_checkpoint, train
from .visualize import visualize

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "parse_config",
    "evaluate_model",
    "run_sweep",
    "sweep",
    "RuntimeAbort",
    "build_model",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "visualize",
]
