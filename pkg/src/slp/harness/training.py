"""Training loop, learning-rate schedule, and binary checkpoints.

Every sampled quantity is a pure function of (config, seed, step), so a run
is bitwise reproducible and a checkpoint plus its step counter is enough to
resume on the identical trajectory. Log lines are structured text; the
wall-time field is the only nondeterministic entry.
"""

from __future__ import annotations

import os
import struct
import time

import numpy as np

from ..autodiff import AdamState, adam_step, clip_global_norm
from ..model import ModelConfig, SlotAutoencoder, SlpSettings
from ..scenegen import epoch_permutation, read_dataset
from .config import ConfigError, validate_for_run

CHECKPOINT_MAGIC = b"SLPC"
CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.slpc"
LOG_NAME = "train.log"


class RuntimeAbort(RuntimeError):
    """Training hit a non-recoverable runtime condition (e.g. non-finite loss)."""


def build_model(config, rng=None):
    model_cfg = ModelConfig(
        image_size=config.model.image_size, k=config.model.k,
        slot_dim=config.model.slot_dim, proj_dim=config.model.proj_dim,
        t_slot=config.model.t_slot, init_mode=config.model.init_mode,
        enc_channels=config.model.enc_channels, enc_stride=config.model.enc_stride,
        dec_channels=config.model.dec_channels, seed_grid=config.model.seed_grid,
    )
    slp_cfg = SlpSettings(
        enabled=config.slp.enabled, alpha_lr=config.slp.alpha_lr,
        lambda_norm=config.slp.lambda_norm, t_spat=config.slp.t_spat,
    )
    if rng is None:
        rng = np.random.default_rng([config.training.seed, 1])
    return SlotAutoencoder(model_cfg, slp_cfg, rng)


def learning_rate(config, step):
    """Linear warmup to the base rate, then exponential half-life decay."""
    opt = config.optimizer
    warm = min(1.0, step / opt.warmup_steps) if opt.warmup_steps > 0 else 1.0
    decay = 0.5 ** (step / opt.half_life_steps) if opt.half_life_steps > 0 else 1.0
    return opt.lr * warm * decay


def batch_indices(count, batch_size, seed, step):
    """Training batch for a given 0-based step: a pure function of its inputs."""
    per_epoch = (count + batch_size - 1) // batch_size
    epoch, slot = divmod(step, per_epoch)
    order = epoch_permutation(count, [seed, 3, epoch])
    return order[slot * batch_size : (slot + 1) * batch_size]


def slot_noise_seeds(seed, step, batch_size):
    return [[seed, 2, step, pos] for pos in range(batch_size)]


# -- checkpoint serialization ---------------------------------------------------


def _pack_array(name, arr):
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + np.ascontiguousarray(arr, dtype=np.float64).tobytes()


def _read_array(r):
    (nlen,) = struct.unpack("<H", r.read(2))
    name = r.read(nlen).decode("utf-8")
    (ndim,) = struct.unpack("<B", r.read(1))
    shape = tuple(struct.unpack("<I", r.read(4))[0] for _ in range(ndim))
    n = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(r.read(8 * n), dtype="<f8").reshape(shape).copy()
    return name, data


def save_checkpoint(path, config_hash, step, params, adam):
    """Write params and optimizer state; byte-identical across save/load/save."""
    names = sorted(params)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<H", CHECKPOINT_VERSION))
        f.write(config_hash.encode("ascii"))
        f.write(struct.pack("<QI", step, len(names)))
        for name in names:
            f.write(_pack_array(name, params[name].data))
        f.write(struct.pack("<Q", adam.t))
        for name, m in zip(names, adam.m):
            f.write(_pack_array(name, m))
        for name, v in zip(names, adam.v):
            f.write(_pack_array(name, v))


def load_checkpoint(path):
    """Returns (config_hash, step, {name: array}, AdamState)."""
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ConfigError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        config_hash = f.read(64).decode("ascii")
        step, n = struct.unpack("<QI", f.read(12))
        params = dict(_read_array(f) for _ in range(n))
        (t,) = struct.unpack("<Q", f.read(8))
        adam = AdamState(t=t)
        adam.m = [_read_array(f)[1] for _ in range(n)]
        adam.v = [_read_array(f)[1] for _ in range(n)]
    return config_hash, step, params, adam


def restore_model(model, params):
    own = model.params()
    missing = sorted(set(own) - set(params))
    extra = sorted(set(params) - set(own))
    if missing or extra:
        raise ConfigError(f"checkpoint/model parameter mismatch: missing {missing}, unexpected {extra}")
    for name, tensor in own.items():
        if tensor.data.shape != params[name].shape:
            raise ConfigError(f"checkpoint shape mismatch for {name}: {params[name].shape} vs {tensor.data.shape}")
        tensor.data = params[name].copy()


def _bias_diagnostics(output):
    stats = []
    for per_image in output.bias_states:
        for state in per_image:
            if state.bias_value is not None:
                b = state.bias_value
                stats.append((float(b.min()), float(b.max()), float(np.abs(b).mean())))
    return stats


def _default_eval_hook(config):
    if not config.dataset.eval_path or not os.path.exists(config.dataset.eval_path):
        return None
    from .evaluate import evaluate_model

    eval_set = read_dataset(config.dataset.eval_path)
    indices = range(min(config.training.eval_count, len(eval_set)))

    def hook(model, step):
        report = evaluate_model(model, eval_set, indices=indices)
        return {name: report.aggregate(name)[0] for name in report.names()}

    return hook


def train(config, resume_from=None, eval_hook=None):
    """Run the outer loop; returns (checkpoint_path, log_path).

    ``eval_hook(model, step)`` is called every ``training.eval_interval``
    steps and must return a dict of metric name -> value to log; the default
    evaluates a fixed slice of ``dataset.eval_path`` when that is set.
    """
    validate_for_run(config)
    dataset = read_dataset(config.dataset.path)
    if eval_hook is None:
        eval_hook = _default_eval_hook(config)
    if dataset.spec.height != config.model.image_size or dataset.spec.width != config.model.image_size:
        raise ConfigError(
            f"model.image_size {config.model.image_size} does not match dataset "
            f"{dataset.spec.height}x{dataset.spec.width}"
        )
    if config.model.k < dataset.spec.max_objects + 1:
        raise ConfigError(
            f"model.k={config.model.k} leaves no background slot for scenes with up to "
            f"{dataset.spec.max_objects} objects"
        )

    os.makedirs(config.output.dir, exist_ok=True)
    config.save(os.path.join(config.output.dir, "config.txt"))
    model = build_model(config)
    adam = AdamState()
    start_step = 0
    if resume_from is not None:
        saved_hash, start_step, params, adam = load_checkpoint(resume_from)
        if saved_hash != config.config_hash():
            raise ConfigError(f"checkpoint config hash {saved_hash[:12]}... does not match current config")
        restore_model(model, params)

    names = sorted(model.params())
    tensors = [model.params()[n] for n in names]
    seed = config.training.seed
    count = len(dataset)
    log_path = os.path.join(config.output.dir, LOG_NAME)
    mode = "a" if resume_from is not None else "w"

    with open(log_path, mode) as log:
        for step in range(start_step, config.training.steps):
            t0 = time.perf_counter()
            indices = batch_indices(count, config.training.batch_size, seed, step)
            images = dataset.images(indices)
            seeds = slot_noise_seeds(seed, step, len(indices))
            output = model.forward(images, seeds)
            loss_value = output.loss.item()
            if not np.isfinite(loss_value):
                dump = os.path.join(config.output.dir, "abort_dump.txt")
                with open(dump, "w") as f:
                    f.write(f"step {step}\nloss {loss_value!r}\nbatch_indices {list(map(int, indices))}\n")
                    for lo, hi, mean_abs in _bias_diagnostics(output):
                        f.write(f"bias min {lo!r} max {hi!r} mean_abs {mean_abs!r}\n")
                raise RuntimeAbort(f"non-finite loss {loss_value!r} at step {step}; diagnostics in {dump}")

            model.zero_grad()
            output.loss.backward()
            grads = [
                t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
            ]
            clip_global_norm(grads, config.optimizer.grad_clip)
            lr = learning_rate(config, step + 1)
            adam_step(tensors, grads, adam, lr)

            elapsed = time.perf_counter() - t0
            log.write(f"step={step + 1} loss={loss_value!r} lr={lr!r} time={elapsed:.4f}\n")
            if eval_hook is not None and (step + 1) % config.training.eval_interval == 0:
                metrics = eval_hook(model, step + 1)
                parts = " ".join(f"{k}={v!r}" for k, v in sorted(metrics.items()))
                log.write(f"eval step={step + 1} {parts}\n")

    ckpt_path = os.path.join(config.output.dir, CHECKPOINT_NAME)
    save_checkpoint(ckpt_path, config.config_hash(), config.training.steps, model.params(), adam)
    return ckpt_path, log_path
