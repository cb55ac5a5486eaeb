"""Iterative slot attention with a pluggable spatial-bias hook.

Slots compete for feature positions through a slot-axis softmax; a hook
called on each iteration's logits can inject an additive bias (the spatial
locality prior), or return zeros to recover the vanilla mechanism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ContractError,
    GruParams,
    Tensor,
    add,
    broadcast_to,
    div,
    exp,
    glorot_uniform,
    gru_cell,
    layer_norm,
    linear,
    matmul,
    mul,
    relu,
    softmax_axis,
    stop_gradient,
    sub,
    sum_,
)

RENORM_EPS = 1e-8

INIT_MODES = ("gaussian", "learned_query")


@dataclass(frozen=True)
class SlotConfig:
    num_slots: int = 7
    slot_dim: int = 64
    proj_dim: int = 64
    iters: int = 3
    init_mode: str = "gaussian"

    def __post_init__(self):
        if self.num_slots < 2:
            raise ContractError(f"SlotConfig: need at least 2 slots, got {self.num_slots}")
        if self.iters < 1:
            raise ContractError(f"SlotConfig: need at least 1 iteration, got {self.iters}")
        if self.proj_dim < 1 or self.slot_dim < 1:
            raise ContractError("SlotConfig: slot_dim and proj_dim must be positive")
        if self.init_mode not in INIT_MODES:
            raise ContractError(f"SlotConfig: unknown init_mode {self.init_mode!r}")


@dataclass
class SlotBatch:
    """Final slots plus the last iteration's attention maps.

    ``attention`` is the slot-axis softmax (columns sum to 1);
    ``attention_renorm`` additionally normalizes each slot row over positions.
    """

    slots: Tensor  # (K, D_slot)
    attention: Tensor  # (K, N)
    attention_renorm: Tensor  # (K, N)


class SlotAttention:
    """Parameter container and forward pass for the slot-update loop."""

    def __init__(self, config, feature_dim, rng):
        self.config = config
        self.feature_dim = feature_dim
        c, d, ds, k = feature_dim, config.proj_dim, config.slot_dim, config.num_slots

        def p(arr):
            return Tensor(arr, requires_grad=True)

        self.mu = p(rng.normal(0.0, 1.0, size=ds))
        self.log_sigma = p(np.zeros(ds))
        self.queries = p(rng.normal(0.0, 1.0, size=(k, ds)))
        self.w_q = p(glorot_uniform(rng, (ds, d)))
        self.w_k = p(glorot_uniform(rng, (c, d)))
        # values project to the slot width so the GRU sees matching shapes
        self.w_v = p(glorot_uniform(rng, (c, ds)))
        self.ln_feat_g, self.ln_feat_b = p(np.ones(c)), p(np.zeros(c))
        self.ln_slot_g, self.ln_slot_b = p(np.ones(ds)), p(np.zeros(ds))
        self.ln_mlp_g, self.ln_mlp_b = p(np.ones(ds)), p(np.zeros(ds))
        self.gru = GruParams(
            w_iz=p(glorot_uniform(rng, (ds, ds))), w_ir=p(glorot_uniform(rng, (ds, ds))),
            w_in=p(glorot_uniform(rng, (ds, ds))), w_hz=p(glorot_uniform(rng, (ds, ds))),
            w_hr=p(glorot_uniform(rng, (ds, ds))), w_hn=p(glorot_uniform(rng, (ds, ds))),
            b_iz=p(np.zeros(ds)), b_ir=p(np.zeros(ds)), b_in=p(np.zeros(ds)),
            b_hz=p(np.zeros(ds)), b_hr=p(np.zeros(ds)), b_hn=p(np.zeros(ds)),
        )
        hidden = 4 * ds
        self.mlp_w1 = p(glorot_uniform(rng, (ds, hidden)))
        self.mlp_b1 = p(np.zeros(hidden))
        self.mlp_w2 = p(glorot_uniform(rng, (hidden, ds)))
        self.mlp_b2 = p(np.zeros(ds))

    def params(self):
        named = {
            "mu": self.mu, "log_sigma": self.log_sigma, "queries": self.queries,
            "w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v,
            "ln_feat_g": self.ln_feat_g, "ln_feat_b": self.ln_feat_b,
            "ln_slot_g": self.ln_slot_g, "ln_slot_b": self.ln_slot_b,
            "ln_mlp_g": self.ln_mlp_g, "ln_mlp_b": self.ln_mlp_b,
            "mlp_w1": self.mlp_w1, "mlp_b1": self.mlp_b1,
            "mlp_w2": self.mlp_w2, "mlp_b2": self.mlp_b2,
        }
        for name, t in self.gru.tensors().items():
            named[f"gru.{name}"] = t
        return named

    # -- operations ------------------------------------------------------------

    def init_slots(self, rng=None):
        """Draw initial slots: Gaussian samples, or the learned queries.

        The Gaussian spread is parametrized as exp(log_sigma), so it can
        never go nonpositive.
        """
        if self.config.init_mode == "gaussian":
            if rng is None:
                raise ContractError("init_slots: gaussian mode needs an rng")
            shape = (self.config.num_slots, self.config.slot_dim)
            noise = rng.standard_normal(shape)
            mu = broadcast_to(self.mu.reshape(1, -1), shape)
            spread = broadcast_to(exp(self.log_sigma).reshape(1, -1), shape)
            return add(mu, mul(spread, Tensor(noise)))
        return self.queries

    def attention_logits(self, slots, features):
        """Scaled key-query match: q(S) k(Z)^T / sqrt(d)."""
        if slots.shape[1] != self.w_q.shape[0]:
            raise ContractError(f"attention_logits: slots {slots.shape} vs projection {self.w_q.shape}")
        if features.shape[1] != self.w_k.shape[0]:
            raise ContractError(f"attention_logits: features {features.shape} vs projection {self.w_k.shape}")
        q = matmul(slots, self.w_q)
        k = matmul(features, self.w_k)
        return div(matmul(q, k.T), np.sqrt(self.config.proj_dim))

    def attend(self, logits, bias, features):
        """Biased softmax over slots, row renormalization, weighted updates."""
        if bias.shape != logits.shape:
            raise ContractError(f"attend: bias {bias.shape} vs logits {logits.shape}")
        attention = softmax_axis(add(logits, bias), axis=0)
        row_sums = sum_(attention, axis=1, keepdims=True)
        attention_renorm = div(attention, add(row_sums, RENORM_EPS))
        values = matmul(features, self.w_v)
        updates = matmul(attention_renorm, values)
        return attention, attention_renorm, updates

    def slot_update(self, slots, updates):
        """GRU step then residual MLP, independently per slot row."""
        slots = gru_cell(slots, updates, self.gru)
        normed = layer_norm(slots, self.ln_mlp_g, self.ln_mlp_b)
        hidden = relu(linear(normed, self.mlp_w1, self.mlp_b1))
        return add(slots, linear(hidden, self.mlp_w2, self.mlp_b2))

    def run(self, features, bias_hook=None, rng=None):
        """Full loop over slot iterations; returns the final :class:`SlotBatch`.

        ``bias_hook(logits) -> Tensor`` supplies the additive spatial bias for
        each iteration; ``None`` uses zeros (vanilla slot attention).
        """
        cfg = self.config
        features = layer_norm(features, self.ln_feat_g, self.ln_feat_b)
        slots = self.init_slots(rng)
        attention = attention_renorm = None
        for _ in range(cfg.iters):
            slots = layer_norm(slots, self.ln_slot_g, self.ln_slot_b)
            logits = self.attention_logits(slots, features)
            if bias_hook is None:
                bias = Tensor(np.zeros(logits.shape))
            else:
                bias = bias_hook(logits)
            attention, attention_renorm, updates = self.attend(logits, bias, features)
            slots = self.slot_update(slots, updates)
        if cfg.init_mode == "learned_query":
            # straight-through: add a direct gradient route to the queries
            # without changing slot values (q - stop(q) is exactly zero)
            slots = add(slots, sub(self.queries, stop_gradient(self.queries)))
        return SlotBatch(slots=slots, attention=attention, attention_renorm=attention_renorm)
