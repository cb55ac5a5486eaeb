"""Spatial locality prior for slot attention.

Each slot's attention over grid positions is summarized as a "spotlight"
(mean position and isotropic variance). An additive bias matrix on the
attention logits is optimized per input by a small constraint-satisfaction
loop so the spotlights stay compact and mutually distinct. The bias
initialization is a learned parameter, trained through the outer task loss
via a straight-through estimator, which breaks slot symmetry by assigning
slots default image regions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ContractError,
    Tensor,
    add,
    div,
    exp,
    matmul,
    mul,
    neg,
    reshape,
    softmax_axis,
    sqrt,
    square,
    stop_gradient,
    sub,
    sum_,
)

__all__ = [
    "PositionGrid",
    "SpotlightStats",
    "BiasState",
    "compute_distribution",
    "loss_distinct",
    "loss_norm",
    "csp_total_loss",
    "anneal_lr",
    "meta_defaults",
    "normalized_init",
    "descend_bias",
    "compose_bias",
    "run_csp",
]

DISTINCT_EPS = 1e-8


@dataclass(frozen=True)
class PositionGrid:
    """Row-major enumeration of (x, y) patch-center coordinates."""

    gx: int
    gy: int

    def __post_init__(self):
        if self.gx < 1 or self.gy < 1:
            raise ContractError(f"PositionGrid extents must be positive, got {(self.gx, self.gy)}")

    @property
    def n(self):
        return self.gx * self.gy

    def positions(self):
        """(N, 2) array of (x, y); position p = y * gx + x."""
        ys, xs = np.divmod(np.arange(self.n), self.gx)
        return np.stack([xs, ys], axis=1).astype(np.float64)


@dataclass
class SpotlightStats:
    """Per-slot attention center and isotropic spread, in patch units."""

    means: Tensor  # (K, 2)
    variances: Tensor  # (K,)


def compute_distribution(attention, grid):
    """Attention-weighted mean and variance per slot (differentiable).

    ``attention`` is the (K, N) slot-axis softmax; each row must have
    positive mass.
    """
    row_sums = attention.data.sum(axis=1)
    if np.any(row_sums <= 0):
        raise ContractError("compute_distribution: a slot row has nonpositive attention mass")
    pos = Tensor(grid.positions())  # (N, 2)
    k = attention.shape[0]
    total = sum_(attention, axis=1, keepdims=True)  # (K, 1)
    means = div(matmul(attention, pos), total)  # (K, 2)
    # |p - m_k|^2 for every (slot, position) pair via broadcasting
    diff = sub(reshape(pos, (1, grid.n, 2)), reshape(means, (k, 1, 2)))
    sq_dist = sum_(square(diff), axis=2)  # (K, N)
    variances = div(sum_(mul(attention, sq_dist), axis=1), reshape(total, (k,)))
    return SpotlightStats(means=means, variances=variances)


def loss_distinct(stats):
    """Pairwise spotlight-overlap penalty, summed over unordered slot pairs.

    exp(-|m_k - m_k'|^2 / (v_k + v_k' + eps)); coincident point masses
    (0/0) resolve to the maximal penalty of 1 per pair. Pair distances are
    formed from direct mean differences (not the expanded quadratic), which
    keeps the loss translation-invariant to rounding error.
    """
    k = stats.means.shape[0]
    if k < 2:
        return Tensor(0.0)
    diff = sub(reshape(stats.means, (k, 1, 2)), reshape(stats.means, (1, k, 2)))
    pair_dist = sum_(square(diff), axis=2)  # (K, K)
    pair_var = add(reshape(stats.variances, (k, 1)), reshape(stats.variances, (1, k)))
    scores = exp(neg(div(pair_dist, add(pair_var, DISTINCT_EPS))))
    upper = Tensor(np.triu(np.ones((k, k)), k=1))
    return sum_(mul(scores, upper))


def loss_norm(bias):
    """Squared Frobenius norm of the bias matrix."""
    return sum_(square(bias))


def _csp_losses(logits, bias, grid, lambda_norm):
    attention = softmax_axis(add(logits, bias), axis=0)
    ld = loss_distinct(compute_distribution(attention, grid))
    ln = loss_norm(bias)
    return ld, ln, add(ld, mul(lambda_norm, ln))


def csp_total_loss(logits, bias, grid, lambda_norm):
    """Distinctness plus weighted norm penalty of the biased attention."""
    if logits.shape != bias.shape:
        raise ContractError(f"csp_total_loss: logits {logits.shape} vs bias {bias.shape}")
    return _csp_losses(logits, bias, grid, lambda_norm)[2]


def anneal_lr(base_lr, j, t_spat):
    """Step size for descent step ``j`` (zero-based): base * (T - j) / T."""
    if not 0 <= j < t_spat:
        raise ContractError(f"anneal_lr: step {j} outside [0, {t_spat})")
    return base_lr * (t_spat - j) / t_spat


def meta_defaults():
    """Sweep-backed defaults: (bias lr, norm weight, spatial-iteration candidates)."""
    return 1.0, 0.1, (1, 5, 10, 20, 25)


@dataclass
class BiasState:
    """Working state of the spatial-bias CSP for one forward pass.

    ``init`` is the learned (K, N) initialization parameter. The working bias
    is re-derived from it (Frobenius-normalized) at the start of every inner
    loop; ``loss_trace`` holds one (distinct, norm, total) triple per descent
    step of the most recent loop.
    """

    init: Tensor
    alpha_lr: float
    t_spat: int
    lambda_norm: float
    loss_trace: list = field(default_factory=list)
    bias_value: np.ndarray | None = None

    def __post_init__(self):
        if self.alpha_lr <= 0:
            raise ContractError(f"BiasState: alpha_lr must be positive, got {self.alpha_lr}")
        if self.t_spat < 0:
            raise ContractError(f"BiasState: t_spat must be nonnegative, got {self.t_spat}")
        if self.lambda_norm < 0:
            raise ContractError(f"BiasState: lambda_norm must be nonnegative, got {self.lambda_norm}")


def normalized_init(init):
    """Differentiable Frobenius normalization of the bias init parameter.

    The normalization is singular at the origin; an all-zero init maps to an
    exactly-zero bias with zero gradient (the subgradient convention), so a
    zero init reduces the pipeline to the unbiased one instead of blowing up.
    """
    if float((init.data * init.data).sum()) == 0.0:
        return mul(init, 0.0)
    return div(init, sqrt(sum_(square(init))))


def descend_bias(logits_value, start_value, grid, state):
    """Numeric inner loop: annealed gradient descent on the CSP loss.

    The logits are held fixed; each step differentiates the loss with the
    current bias as a leaf. Returns the per-step increments (lr_j * grad_j)
    and fills ``state.loss_trace``.
    """
    logits_const = Tensor(logits_value)
    value = np.array(start_value, dtype=np.float64)
    increments = []
    state.loss_trace = []
    for j in range(state.t_spat):
        leaf = Tensor(value, requires_grad=True)
        ld, ln, total = _csp_losses(logits_const, leaf, grid, state.lambda_norm)
        total.backward()
        state.loss_trace.append((ld.item(), ln.item(), total.item()))
        step = anneal_lr(state.alpha_lr, j, state.t_spat) * leaf.grad
        increments.append(step)
        value = value - step
    return increments


def compose_bias(init, increments, t_spat):
    """Rebuild the descent trajectory as a differentiable expression.

    Increments enter as constants. On the final step (zero-based
    j = t_spat - 1) the straight-through insertion detaches the trajectory
    and re-attaches the raw init parameter, so outer-loop gradients reach it
    directly. Grouping the insertion as stop(bias) + (init - stop(init))
    makes it bit-exact at the value level.
    """
    bias = normalized_init(init)
    for j in range(t_spat):
        if j == t_spat - 1:
            bias = add(stop_gradient(bias), sub(init, stop_gradient(init)))
        bias = sub(bias, Tensor(increments[j]))
    return bias


def run_csp(logits, grid, state):
    """Full inner loop: normalize init, descend, return the bias expression.

    No gradients flow from the CSP loss into the logits; the returned (K, N)
    bias carries outer-task gradients to the init parameter through the
    straight-through path (plus the init-normalization path when t_spat=0).
    """
    if logits.shape != state.init.shape:
        raise ContractError(f"run_csp: logits {logits.shape} vs init {state.init.shape}")
    if logits.shape[1] != grid.n:
        raise ContractError(f"run_csp: logits {logits.shape} vs grid of {grid.n} positions")
    start = normalized_init(state.init).data
    increments = descend_bias(logits.data, start, grid, state)
    bias = compose_bias(state.init, increments, state.t_spat)
    state.bias_value = bias.data
    return bias
