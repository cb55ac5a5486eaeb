"""Hyperparameter sweeps: one training run per (grid value, seed) cell.

Completed cells (matching config hash, checkpoint, and evaluation report
already on disk) are reused, so an interrupted sweep resumes where it left
off and re-running is idempotent.
"""

from __future__ import annotations

import copy
import os

from ..metrics import MetricsReport
from ..scenegen import read_dataset
from .config import apply_overrides
from .evaluate import evaluate_model
from .training import CHECKPOINT_NAME, build_model, load_checkpoint, restore_model, train

REPORT_NAME = "eval_report.txt"


def _cell_dir(base_dir, axis_key, value, seed):
    tag = axis_key.replace(".", "_")
    return os.path.join(base_dir, f"{tag}_{value}_seed{seed}")


def _cell_config(base_config, axis_key, value, seed, run_dir):
    config = copy.deepcopy(base_config)
    apply_overrides(config, {axis_key: value, "training.seed": seed, "output.dir": run_dir})
    return config


def _cell_complete(config, run_dir):
    ckpt = os.path.join(run_dir, CHECKPOINT_NAME)
    report = os.path.join(run_dir, REPORT_NAME)
    cfg_file = os.path.join(run_dir, "config.txt")
    if not (os.path.exists(ckpt) and os.path.exists(report) and os.path.exists(cfg_file)):
        return False
    with open(cfg_file) as f:
        return f.read() == config.canonical_text()


def run_cell(config, eval_count=None):
    """Train one cell (unless already complete) and write its eval report."""
    run_dir = config.output.dir
    if not _cell_complete(config, run_dir):
        train(config)
        model = build_model(config)
        _, _, params, _ = load_checkpoint(os.path.join(run_dir, CHECKPOINT_NAME))
        restore_model(model, params)
        eval_set = read_dataset(config.dataset.eval_path)
        indices = range(min(eval_count, len(eval_set))) if eval_count else None
        report = evaluate_model(model, eval_set, indices=indices)
        report.save(os.path.join(run_dir, REPORT_NAME))
    with open(os.path.join(run_dir, REPORT_NAME)) as f:
        return MetricsReport.parse_text(f.read())


def sweep(base_config, axis_key, values, seeds, metric="fg_ari", eval_count=None):
    """Train the full grid; returns {value: {"per_seed", "mean", "sem"}}."""
    table = {}
    for value in values:
        per_seed = []
        for seed in seeds:
            run_dir = _cell_dir(base_config.output.dir, axis_key, value, seed)
            config = _cell_config(base_config, axis_key, value, seed, run_dir)
            report = run_cell(config, eval_count=eval_count)
            per_seed.append(report[metric][0])
        n = len(per_seed)
        mean = sum(per_seed) / n
        var = sum((x - mean) ** 2 for x in per_seed) / (n - 1) if n > 1 else 0.0
        table[value] = {"per_seed": per_seed, "mean": mean, "sem": (var / n) ** 0.5 if n > 1 else 0.0}
    return table


def format_table(table, axis_key, metric="fg_ari"):
    lines = [f"# axis={axis_key} metric={metric}"]
    for value, row in table.items():
        lines.append(f"{value} {row['mean']!r} {row['sem']!r} {len(row['per_seed'])}")
    return "\n".join(lines) + "\n"


def run_sweep(base_config, axis_key, values, seeds, metric="fg_ari", eval_count=None):
    table = sweep(base_config, axis_key, values, seeds, metric=metric, eval_count=eval_count)
    os.makedirs(base_config.output.dir, exist_ok=True)
    out = os.path.join(base_config.output.dir, "sweep_table.txt")
    with open(out, "w") as f:
        f.write(format_table(table, axis_key, metric))
    return table, out
