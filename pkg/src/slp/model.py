"""Full object-discovery autoencoder: encoder, slot attention (+ optional
spatial locality prior), mixture decoder, and the reconstruction objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Tensor, stack
from .perception import Encoder, MixtureDecoder, reconstruction_loss
from .slot_attention import SlotAttention, SlotConfig
from .spatial_prior import BiasState, run_csp

BIAS_INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    k: int = 7
    slot_dim: int = 64
    proj_dim: int = 64
    t_slot: int = 3
    init_mode: str = "gaussian"
    enc_channels: int = 64
    enc_stride: int = 1
    dec_channels: int = 64
    seed_grid: int = 8

    def __post_init__(self):
        if self.enc_stride not in (1, 2):
            raise ContractError(f"ModelConfig: enc_stride must be 1 or 2, got {self.enc_stride}")


@dataclass(frozen=True)
class SlpSettings:
    enabled: bool = False
    alpha_lr: float = 1.0
    lambda_norm: float = 0.1
    t_spat: int = 1


@dataclass
class ForwardOutput:
    loss: Tensor
    recon: object  # perception.Reconstruction, batched
    slot_batches: list
    bias_states: list  # per image: list of BiasState, one per slot iteration


class SlotAutoencoder:
    """End-to-end model; parameters live in named float64 tensors."""

    def __init__(self, config, slp, rng):
        self.config = config
        self.slp = slp
        hw = config.image_size
        self.encoder = Encoder(config.enc_channels, rng, first_stride=config.enc_stride)
        self.grid = self.encoder.output_grid(hw, hw)
        slot_cfg = SlotConfig(
            num_slots=config.k, slot_dim=config.slot_dim, proj_dim=config.proj_dim,
            iters=config.t_slot, init_mode=config.init_mode,
        )
        self.slots = SlotAttention(slot_cfg, config.enc_channels, rng)
        self.decoder = MixtureDecoder(
            config.slot_dim, config.dec_channels, (hw, hw), rng,
            seed_hw=(config.seed_grid, config.seed_grid),
        )
        self.bias_init = None
        if slp.enabled:
            self.bias_init = Tensor(rng.normal(0.0, BIAS_INIT_STD, size=(config.k, self.grid.n)), requires_grad=True)

    def params(self):
        named = {}
        for name, t in self.encoder.params().items():
            named[f"encoder.{name}"] = t
        for name, t in self.slots.params().items():
            named[f"slots.{name}"] = t
        for name, t in self.decoder.params().items():
            named[f"decoder.{name}"] = t
        if self.bias_init is not None:
            named["slp.init"] = self.bias_init
        return dict(sorted(named.items()))

    def zero_grad(self):
        for t in self.params().values():
            t.zero_grad()

    def _bias_hook(self, collected):
        if not self.slp.enabled:
            return None

        def hook(logits):
            state = BiasState(
                init=self.bias_init, alpha_lr=self.slp.alpha_lr,
                t_spat=self.slp.t_spat, lambda_norm=self.slp.lambda_norm,
            )
            collected.append(state)
            return run_csp(logits, self.grid, state)

        return hook

    def forward(self, images, slot_seeds):
        """Batched forward pass.

        ``images`` is a (B, 3, H, W) float array; ``slot_seeds`` holds one
        rng seed (int or entropy list) per image for the Gaussian slot init.
        """
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1] != 3:
            raise ContractError(f"forward: expected (B, 3, H, W) images, got {images.shape}")
        b = images.shape[0]
        if len(slot_seeds) != b:
            raise ContractError(f"forward: {len(slot_seeds)} slot seeds for batch of {b}")
        feature_map = self.encoder.encode(Tensor(images))
        feats = feature_map.features  # (B, N, C)

        slot_batches = []
        bias_states = []
        from .autodiff import reshape, slice_axis

        for i in range(b):
            per_image = []
            hook = self._bias_hook(per_image)
            rng = np.random.default_rng(slot_seeds[i]) if self.config.init_mode == "gaussian" else None
            f_i = reshape(slice_axis(feats, 0, i, i + 1), (self.grid.n, self.config.enc_channels))
            slot_batches.append(self.slots.run(f_i, bias_hook=hook, rng=rng))
            bias_states.append(per_image)

        all_slots = stack([sb.slots for sb in slot_batches], axis=0)  # (B, K, D)
        recon = self.decoder.decode(all_slots)
        loss = reconstruction_loss(recon, Tensor(images))
        return ForwardOutput(loss=loss, recon=recon, slot_batches=slot_batches, bias_states=bias_states)
