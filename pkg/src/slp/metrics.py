"""Segmentation metrics: ARI / foreground-ARI, mBO, IoU, Dice, MSE.

The adjusted Rand index is computed from the contingency table with exact
integer pair counts, so it agrees bit-for-bit with brute-force pair
counting. Mask arguments are plain boolean numpy arrays; partitions carry
one integer label per pixel plus an optional ignore set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, Tensor


@dataclass
class Partition:
    """Integer labels per pixel; ignored pixels are excluded from scoring."""

    labels: np.ndarray
    ignore: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if np.any(self.labels < 0):
            raise ContractError("Partition: labels must be nonnegative")
        if self.ignore is not None:
            self.ignore = np.asarray(self.ignore, dtype=bool)
            if self.ignore.shape != self.labels.shape:
                raise ContractError(f"Partition: ignore shape {self.ignore.shape} vs labels {self.labels.shape}")


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def masks_from_attention(slot_masks):
    """Per-pixel argmax over the slot axis; ties go to the lowest slot index."""
    arr = _as_array(slot_masks)
    return Partition(labels=np.argmax(arr, axis=0))


def _comb2(x):
    x = int(x)
    return x * (x - 1) // 2


def _pair_sums(pred_labels, truth_labels):
    _, pi = np.unique(pred_labels, return_inverse=True)
    _, ti = np.unique(truth_labels, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    within = sum(_comb2(v) for v in table.reshape(-1))
    rows = sum(_comb2(v) for v in table.sum(axis=1))
    cols = sum(_comb2(v) for v in table.sum(axis=0))
    return within, rows, cols, _comb2(pred_labels.size)


def ari(pred, truth):
    """Adjusted Rand index between two partitions of the same pixel domain.

    Both-single-cluster (and any zero-denominator) degeneracy scores 1.
    """
    pl, tl = pred.labels.reshape(-1), truth.labels.reshape(-1)
    if pl.shape != tl.shape:
        raise ContractError(f"ari: label domains differ, {pred.labels.shape} vs {truth.labels.shape}")
    keep = np.ones(pl.shape, dtype=bool)
    if pred.ignore is not None:
        keep &= ~pred.ignore.reshape(-1)
    if truth.ignore is not None:
        keep &= ~truth.ignore.reshape(-1)
    pl, tl = pl[keep], tl[keep]
    if pl.size == 0:
        raise ContractError("ari: empty pixel domain after removing ignored pixels")
    within, rows, cols, total = _pair_sums(pl, tl)
    # exact integer numerator/denominator of the adjusted index
    num = 2 * (total * within - rows * cols)
    den = total * (rows + cols) - 2 * rows * cols
    if den == 0:
        return 1.0
    return num / den


def fg_ari(pred, truth, background_label):
    """ARI restricted to pixels whose TRUE label is foreground."""
    bg = truth.labels == background_label
    if truth.ignore is not None:
        bg = bg | truth.ignore
    if bg.all():
        raise ContractError("fg_ari: no foreground pixels in the ground truth")
    return ari(
        Partition(pred.labels, ignore=pred.ignore),
        Partition(truth.labels, ignore=bg),
    )


def iou_dice(pred_mask, truth_mask):
    """Intersection-over-union and Dice; (1, 1) when both masks are empty."""
    p = np.asarray(pred_mask, dtype=bool)
    t = np.asarray(truth_mask, dtype=bool)
    if p.shape != t.shape:
        raise ContractError(f"iou_dice: shapes differ, {p.shape} vs {t.shape}")
    inter = int((p & t).sum())
    union = int((p | t).sum())
    sizes = int(p.sum()) + int(t.sum())
    if union == 0:
        return 1.0, 1.0
    return inter / union, 2.0 * inter / sizes


def mbo(pred_masks, truth_masks):
    """Mean over ground-truth masks of the best IoU any predicted mask achieves."""
    preds = [np.asarray(m, dtype=bool) for m in pred_masks]
    truths = [np.asarray(m, dtype=bool) for m in truth_masks]
    if not preds:
        raise ContractError("mbo: empty prediction set")
    if not truths:
        raise ContractError("mbo: empty ground-truth set")
    best = [max(iou_dice(p, t)[0] for p in preds) for t in truths]
    return float(np.mean(best))


def foreground_from_slots(slot_masks, truth_foreground):
    """Binary mask of the slot with maximal intersection with the true foreground.

    Slots are binarized by argmax assignment; ties pick the lowest index.
    """
    arr = _as_array(slot_masks)
    truth = np.asarray(truth_foreground, dtype=bool)
    if arr.shape[1:] != truth.shape:
        raise ContractError(f"foreground_from_slots: masks {arr.shape} vs foreground {truth.shape}")
    labels = np.argmax(arr, axis=0)
    inter = np.array([int(((labels == k) & truth).sum()) for k in range(arr.shape[0])])
    return labels == int(np.argmax(inter))


@dataclass
class MetricsReport:
    """Named per-image scores with mean and standard error aggregates."""

    per_image: dict = field(default_factory=dict)

    def add(self, name, value):
        self.per_image.setdefault(name, []).append(float(value))

    def names(self):
        return sorted(self.per_image)

    def aggregate(self, name):
        vals = np.asarray(self.per_image[name], dtype=np.float64)
        mean = float(vals.mean())
        sem = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        return mean, sem, vals.size

    def to_text(self):
        lines = []
        for name in self.names():
            mean, sem, n = self.aggregate(name)
            lines.append(f"{name} {mean!r} {sem!r} {n}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_text())

    @staticmethod
    def parse_text(text):
        """Parse the serialized form back to {name: (mean, sem, n)}."""
        out = {}
        for line in text.strip().splitlines():
            name, mean, sem, n = line.split()
            out[name] = (float(mean), float(sem), int(n))
        return out
