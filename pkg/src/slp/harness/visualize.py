"""Figure export: reconstruction grids, per-slot masks, and bias heatmaps."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

SEPARATOR = 2  # pixels of white between panels


def _to_u8(panel):
    return (np.clip(panel, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def _upscale(arr, h, w):
    """Nearest-neighbour resize of a 2-D map to (h, w)."""
    ys = (np.arange(h) * arr.shape[0]) // h
    xs = (np.arange(w) * arr.shape[1]) // w
    return arr[np.ix_(ys, xs)]


def bias_heatmap(values, h, w):
    """Symmetric gray colormap: zero maps to mid-gray."""
    scale = np.abs(values).max()
    normed = values / (2.0 * scale) + 0.5 if scale > 0 else np.full_like(values, 0.5)
    gray = _upscale(normed, h, w)
    return np.repeat(gray[:, :, None], 3, axis=2)


def _row(panels):
    h = panels[0].shape[0]
    sep = np.ones((h, SEPARATOR, 3))
    pieces = []
    for i, p in enumerate(panels):
        if i:
            pieces.append(sep)
        pieces.append(p)
    return np.concatenate(pieces, axis=1)


def sample_figure(model, sample, index, eval_seed=77):
    """One horizontal strip: input | recon | K masked slots | K bias maps."""
    image = np.transpose(sample.image, (2, 0, 1))[None]
    output = model.forward(image, [[eval_seed, int(index)]])
    h, w = sample.image.shape[:2]
    k = model.config.k

    recon = np.transpose(np.clip(output.recon.image.data[0], 0, 1), (1, 2, 0))
    panels = [sample.image, recon]
    masks = output.recon.slot_masks.data[0]
    rgbs = output.recon.slot_rgbs.data[0]
    for s in range(k):
        panels.append(np.transpose(np.clip(rgbs[s], 0, 1) * masks[s][None], (1, 2, 0)))
    if output.bias_states and output.bias_states[0]:
        bias = output.bias_states[0][-1].bias_value
    else:
        bias = np.zeros((k, model.grid.n))
    for s in range(k):
        panels.append(bias_heatmap(bias[s].reshape(model.grid.gy, model.grid.gx), h, w))
    return _row(panels)


def bias_init_figure(model, h, w):
    """The learned bias initialization, one panel per slot."""
    if model.bias_init is None:
        values = np.zeros((model.config.k, model.grid.n))
    else:
        values = model.bias_init.data
    panels = [
        bias_heatmap(values[s].reshape(model.grid.gy, model.grid.gx), h, w)
        for s in range(model.config.k)
    ]
    return _row(panels)


def save_png(array, path):
    Image.fromarray(_to_u8(array), mode="RGB").save(path, format="PNG")


def load_png(path):
    return np.asarray(Image.open(path).convert("RGB"))


def visualize(model, samples, out_dir, eval_seed=77):
    """Write one strip per sample plus the dataset-level bias-init figure."""
    if not samples:
        raise ValueError("visualize: need at least one sample")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, sample in enumerate(samples):
        path = os.path.join(out_dir, f"sample_{i:03d}.png")
        save_png(sample_figure(model, sample, i, eval_seed), path)
        paths.append(path)
    size = samples[0].image.shape[0]
    init_path = os.path.join(out_dir, "bias_init.png")
    save_png(bias_init_figure(model, size, size), init_path)
    paths.append(init_path)
    return paths
