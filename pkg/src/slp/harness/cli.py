"""Command-line entry point.

Verbs: gen-data, train, eval, viz, sweep. Any config key can be overridden
on the command line as ``--section.key=value``. Exit codes: 0 success,
1 configuration error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import os
import sys

from ..scenegen import GenerationError, sprites_easy, sprites_tex, read_dataset, write_dataset
from .config import ConfigError, load_config
from .evaluate import evaluate_model
from .sweep import run_sweep
from .training import RuntimeAbort, build_model, load_checkpoint, restore_model, train
from .visualize import visualize

PRESETS = {"sprites-easy": sprites_easy, "sprites-tex": sprites_tex}


def _split_overrides(extras):
    overrides = {}
    for item in extras:
        if not item.startswith("--") or "=" not in item:
            raise ConfigError(f"unrecognized argument {item!r}; overrides look like --section.key=value")
        dotted, value = item[2:].split("=", 1)
        overrides[dotted] = value
    return overrides


def _load(args, extras):
    return load_config(args.config, overrides=_split_overrides(extras))


def _model_from_checkpoint(config, checkpoint_path):
    model = build_model(config)
    _, _, params, _ = load_checkpoint(checkpoint_path)
    restore_model(model, params)
    return model


def cmd_gen_data(args, extras):
    if extras:
        raise ConfigError(f"gen-data takes no overrides, got {extras}")
    make_spec = PRESETS[args.preset]
    os.makedirs(args.out, exist_ok=True)
    spec = make_spec(seed=args.seed, size=args.size)
    train_path = os.path.join(args.out, f"{args.preset}-train.slpd")
    write_dataset(spec, args.train_count, train_path)
    print(f"wrote {args.train_count} samples to {train_path}")
    if args.eval_count:
        eval_spec = make_spec(seed=args.seed + 1, size=args.size)
        eval_path = os.path.join(args.out, f"{args.preset}-eval.slpd")
        write_dataset(eval_spec, args.eval_count, eval_path)
        print(f"wrote {args.eval_count} samples to {eval_path}")
    return 0


def cmd_train(args, extras):
    config = _load(args, extras)
    ckpt, log = train(config, resume_from=args.resume)
    print(f"checkpoint: {ckpt}")
    print(f"log: {log}")
    return 0


def cmd_eval(args, extras):
    config = _load(args, extras)
    model = _model_from_checkpoint(config, args.checkpoint)
    dataset = read_dataset(args.dataset or config.dataset.eval_path)
    indices = range(min(args.count, len(dataset))) if args.count else None
    report = evaluate_model(model, dataset, indices=indices)
    text = report.to_text()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text, end="")
    return 0


def cmd_viz(args, extras):
    config = _load(args, extras)
    model = _model_from_checkpoint(config, args.checkpoint)
    dataset = read_dataset(args.dataset or config.dataset.eval_path)
    samples = [dataset[i] for i in range(min(args.count, len(dataset)))]
    paths = visualize(model, samples, args.out)
    for p in paths:
        print(p)
    return 0


def cmd_sweep(args, extras):
    config = _load(args, extras)
    values = [int(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    table, out = run_sweep(config, args.axis, values, seeds, eval_count=args.eval_count or None)
    print(f"table: {out}")
    for value, row in table.items():
        print(f"{args.axis}={value}: {row['mean']:.4f} +/- {row['sem']:.4f} (n={len(row['per_seed'])})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="slp", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen-data", help="generate a sprite dataset")
    g.add_argument("--preset", choices=sorted(PRESETS), required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--train-count", type=int, default=10000)
    g.add_argument("--eval-count", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", default=None)
    e.add_argument("--count", type=int, default=0)
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("viz", help="export reconstruction and bias figures")
    v.add_argument("--config", required=True)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--dataset", default=None)
    v.add_argument("--count", type=int, default=4)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)

    s = sub.add_parser("sweep", help="train a grid of runs and tabulate FG-ARI")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, help="config key to vary, e.g. model.t_slot")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    s.add_argument("--eval-count", type=int, default=0)
    s.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.func(args, extras)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (RuntimeAbort, GenerationError) as e:
        print(f"runtime abort: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
