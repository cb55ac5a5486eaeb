"""Evaluation runner: segmentation and reconstruction metrics over a dataset."""

from __future__ import annotations

import numpy as np

from ..metrics import (
    MetricsReport,
    Partition,
    ari,
    fg_ari,
    foreground_from_slots,
    iou_dice,
    masks_from_attention,
    mbo,
)

BACKGROUND_LABEL = 0


def truth_partition(sample):
    """Ground-truth labels: background 0, objects 1..n (masks are disjoint)."""
    labels = np.zeros(sample.background.shape, dtype=np.int64)
    for i in range(sample.count):
        labels[sample.masks[i]] = i + 1
    return Partition(labels=labels)


def evaluate_sample(model, sample, index, eval_seed, include_foreground_metrics, mbo_with_background=True):
    """Metric dict for one scene."""
    image = np.transpose(sample.image, (2, 0, 1))[None]
    output = model.forward(image, [[eval_seed, int(index)]])
    slot_masks = output.recon.slot_masks.data[0]  # (K, H, W)
    pred = masks_from_attention(slot_masks)
    truth = truth_partition(sample)

    metrics = {
        "mse": float(((output.recon.image.data[0] - image[0]) ** 2).mean()),
        "ari": ari(pred, truth),
        "fg_ari": fg_ari(pred, truth, BACKGROUND_LABEL),
    }
    pred_masks = [pred.labels == k for k in range(slot_masks.shape[0])]
    truth_masks = list(sample.masks)
    if mbo_with_background:
        truth_masks = truth_masks + [sample.background]
    metrics["mbo"] = mbo(pred_masks, truth_masks)
    if include_foreground_metrics:
        fg = ~sample.background
        best = foreground_from_slots(slot_masks, fg)
        i, d = iou_dice(best, fg)
        metrics["iou"] = i
        metrics["dice"] = d
    return metrics


def evaluate_model(model, dataset, indices=None, eval_seed=10_000, mbo_with_background=True):
    """Aggregate a :class:`MetricsReport` over the given dataset indices."""
    if indices is None:
        indices = range(len(dataset))
    include_fg = dataset.spec.max_objects == 1
    report = MetricsReport()
    for i in indices:
        sample = dataset[int(i)]
        for name, value in evaluate_sample(
            model, sample, i, eval_seed, include_fg, mbo_with_background
        ).items():
            report.add(name, value)
    return report
