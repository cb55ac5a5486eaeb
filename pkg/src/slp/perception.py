"""Image front/back ends: CNN encoder and spatial-broadcast mixture decoder.

The encoder maps an RGB image to a row-major grid of feature vectors with a
soft position embedding. The decoder broadcasts each slot over a small seed
grid, upsamples it with a shared transposed-convolution stack to RGB plus a
mask logit, and composites the per-slot images with a pixel-wise softmax
over slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ContractError,
    DimensionError,
    Tensor,
    add,
    broadcast_to,
    conv2d,
    conv_transpose2d,
    glorot_uniform,
    layer_norm,
    linear,
    matmul,
    mean_,
    mul,
    relu,
    reshape,
    slice_axis,
    softmax_axis,
    square,
    sub,
    sum_,
    transpose,
)
from .spatial_prior import PositionGrid


@dataclass
class FeatureMap:
    features: Tensor  # (N, C) or (B, N, C)
    grid: PositionGrid


@dataclass
class Reconstruction:
    """Composite image plus the per-slot decompositions that formed it."""

    image: Tensor  # (3, H, W) or (B, 3, H, W)
    slot_rgbs: Tensor  # (K, 3, H, W) or (B, K, 3, H, W)
    slot_masks: Tensor  # (K, H, W) or (B, K, H, W)


def _coordinate_channels(grid):
    """(N, 4) rows of (x, y, 1-x, 1-y), each axis normalized to [0, 1].

    Degenerate single-extent axes map to coordinate 0.
    """
    pos = grid.positions()
    xs = pos[:, 0] / (grid.gx - 1) if grid.gx > 1 else np.zeros(grid.n)
    ys = pos[:, 1] / (grid.gy - 1) if grid.gy > 1 else np.zeros(grid.n)
    return np.stack([xs, ys, 1.0 - xs, 1.0 - ys], axis=1)


def position_embedding(grid, weight, bias):
    """Project the 4-channel coordinate map to the feature width: (N, C)."""
    if grid.n < 1:
        raise ContractError("position_embedding: empty grid")
    coords = Tensor(_coordinate_channels(grid))
    return add(matmul(coords, weight), bias)


class Encoder:
    """Four 5x5 conv layers (ReLU), position embedding, LayerNorm, 2-layer MLP."""

    KERNEL = 5

    def __init__(self, channels, rng, first_stride=1, in_channels=3):
        self.channels = channels
        self.first_stride = first_stride
        self.in_channels = in_channels
        k = self.KERNEL

        def p(arr):
            return Tensor(arr, requires_grad=True)

        self.conv_w = [p(glorot_uniform(rng, (channels, in_channels, k, k)))]
        self.conv_b = [p(np.zeros(channels))]
        for _ in range(3):
            self.conv_w.append(p(glorot_uniform(rng, (channels, channels, k, k))))
            self.conv_b.append(p(np.zeros(channels)))
        self.pos_w = p(glorot_uniform(rng, (4, channels)))
        self.pos_b = p(np.zeros(channels))
        self.ln_g, self.ln_b = p(np.ones(channels)), p(np.zeros(channels))
        self.mlp_w1 = p(glorot_uniform(rng, (channels, channels)))
        self.mlp_b1 = p(np.zeros(channels))
        self.mlp_w2 = p(glorot_uniform(rng, (channels, channels)))
        self.mlp_b2 = p(np.zeros(channels))

    def params(self):
        named = {}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            named[f"conv{i}.w"] = w
            named[f"conv{i}.b"] = b
        named.update(
            {
                "pos.w": self.pos_w, "pos.b": self.pos_b,
                "ln.g": self.ln_g, "ln.b": self.ln_b,
                "mlp.w1": self.mlp_w1, "mlp.b1": self.mlp_b1,
                "mlp.w2": self.mlp_w2, "mlp.b2": self.mlp_b2,
            }
        )
        return named

    def output_grid(self, height, width):
        s = self.first_stride
        pad = self.KERNEL // 2
        gy = (height + 2 * pad - self.KERNEL) // s + 1
        gx = (width + 2 * pad - self.KERNEL) // s + 1
        return PositionGrid(gx=gx, gy=gy)

    def encode(self, image):
        """Image (3,H,W) or batch (B,3,H,W) to a :class:`FeatureMap`."""
        squeeze = image.ndim == 3
        x = reshape(image, (1,) + image.shape) if squeeze else image
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"encode: expected {self.in_channels} channels, got shape {image.shape}")
        b, _, h, w = x.shape
        pad = self.KERNEL // 2
        x = relu(conv2d(x, self.conv_w[0], self.conv_b[0], stride=self.first_stride, padding=pad))
        for cw, cb in zip(self.conv_w[1:], self.conv_b[1:]):
            x = relu(conv2d(x, cw, cb, stride=1, padding=pad))
        grid = self.output_grid(h, w)
        # (B, C, Gy, Gx) -> (B, N, C), row-major over (y, x)
        x = reshape(transpose(x, (0, 2, 3, 1)), (b, grid.n, self.channels))
        embed = position_embedding(grid, self.pos_w, self.pos_b)
        x = add(x, reshape(embed, (1, grid.n, self.channels)))
        x = layer_norm(x, self.ln_g, self.ln_b)
        x = linear(relu(linear(x, self.mlp_w1, self.mlp_b1)), self.mlp_w2, self.mlp_b2)
        if squeeze:
            x = reshape(x, (grid.n, self.channels))
        return FeatureMap(features=x, grid=grid)


class MixtureDecoder:
    """Spatial-broadcast decoder shared across slots.

    Each slot is tiled over a seed grid, given its own position embedding,
    and upsampled by stride-2 transposed convs to the output size, ending in
    a 4-channel head (RGB + mask logit).
    """

    KERNEL = 5

    def __init__(self, slot_dim, channels, out_hw, rng, seed_hw=(8, 8)):
        self.slot_dim = slot_dim
        self.channels = channels
        self.out_hw = tuple(out_hw)
        self.seed_hw = tuple(seed_hw)
        h, w = self.out_hw
        sh, sw = self.seed_hw
        if h % sh or w % sw or (h // sh) != (w // sw):
            raise ContractError(f"MixtureDecoder: output {self.out_hw} not an integer upscale of seed {self.seed_hw}")
        factor = h // sh
        self.n_up = int(round(np.log2(factor)))
        if 2**self.n_up != factor:
            raise ContractError(f"MixtureDecoder: upscale factor {factor} must be a power of two")

        def p(arr):
            return Tensor(arr, requires_grad=True)

        self.pos_w = p(glorot_uniform(rng, (4, slot_dim)))
        self.pos_b = p(np.zeros(slot_dim))
        k = self.KERNEL
        self.up_w, self.up_b = [], []
        cin = slot_dim
        for _ in range(self.n_up):
            self.up_w.append(p(glorot_uniform(rng, (cin, channels, k, k), fan_in=cin * k * k, fan_out=channels * k * k)))
            self.up_b.append(p(np.zeros(channels)))
            cin = channels
        self.head_w = p(glorot_uniform(rng, (4, cin, 3, 3)))
        self.head_b = p(np.zeros(4))

    def params(self):
        named = {"pos.w": self.pos_w, "pos.b": self.pos_b,
                 "head.w": self.head_w, "head.b": self.head_b}
        for i, (w, b) in enumerate(zip(self.up_w, self.up_b)):
            named[f"up{i}.w"] = w
            named[f"up{i}.b"] = b
        return named

    def decode(self, slots):
        """Slots (K, D) or (B, K, D) to a :class:`Reconstruction`."""
        squeeze = slots.ndim == 2
        s = reshape(slots, (1,) + slots.shape) if squeeze else slots
        b, k, d = s.shape
        if d != self.slot_dim:
            raise DimensionError(f"decode: slot width {d} != configured {self.slot_dim}")
        sh, sw = self.seed_hw
        h, w = self.out_hw

        seed_grid = PositionGrid(gx=sw, gy=sh)
        embed = position_embedding(seed_grid, self.pos_w, self.pos_b)  # (sh*sw, D)
        flat = reshape(s, (b * k, 1, d))
        tiled = broadcast_to(flat, (b * k, sh * sw, d))
        x = add(tiled, reshape(embed, (1, sh * sw, d)))
        # (BK, N, D) -> (BK, D, sh, sw)
        x = transpose(reshape(x, (b * k, sh, sw, d)), (0, 3, 1, 2))
        pad = self.KERNEL // 2
        for uw, ub in zip(self.up_w, self.up_b):
            x = relu(conv_transpose2d(x, uw, ub, stride=2, padding=pad, output_padding=1))
        x = relu(conv2d(x, self.mid_w, self.mid_b, stride=1, padding=pad))
        x = conv2d(x, self.head_w, self.head_b, stride=1, padding=1)  # (BK, 4, H, W)
        x = reshape(x, (b, k, 4, h, w))
        rgbs = slice_axis(x, 2, 0, 3)  # (B, K, 3, H, W)
        mask_logits = reshape(slice_axis(x, 2, 3, 4), (b, k, h, w))
        masks = softmax_axis(mask_logits, axis=1)  # (B, K, H, W)
        image = sum_(mul(rgbs, reshape(masks, (b, k, 1, h, w))), axis=1)  # (B, 3, H, W)
        if squeeze:
            image = reshape(image, (3, h, w))
            rgbs = reshape(rgbs, (k, 3, h, w))
            masks = reshape(masks, (k, h, w))
        return Reconstruction(image=image, slot_rgbs=rgbs, slot_masks=masks)


def reconstruction_loss(recon, target):
    """Mean squared error over all pixels and channels."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if recon.image.shape != target.shape:
        raise DimensionError(f"reconstruction_loss: {recon.image.shape} vs {target.shape}")
    return mean_(square(sub(recon.image, target)))
