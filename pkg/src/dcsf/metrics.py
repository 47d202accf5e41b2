"""Evaluation metrics: AUROC, accuracy, per-step online accuracy.

AUROC uses the rank-based Mann-Whitney form with average ranks for ties,
which matches the quadratic count over positive/negative pairs not just to
rounding but exactly: both numerators are sums of halves below 2^53, hence
exact in double precision, and both divide by the same pair count.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import model


class MetricError(ValueError):
    """The requested metric is undefined for the given inputs."""


@dataclass
class Metrics:
    """Record of evaluation results; fields are None when not applicable."""

    accuracy: float = None
    auroc: float = None
    loss: float = None
    online_accuracy: float = None
    seconds: float = None

    def as_dict(self):
        return {k: v for k, v in vars(self).items() if v is not None}


def evaluate_auroc(labels, scores):
    """P(random positive outscores random negative), ties counted half."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError("labels and scores must be matching vectors")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC is undefined with a single class present")
    ranks = rankdata(s)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def evaluate_accuracy(labels, predictions):
    """Fraction of matching class decisions."""
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if y.size == 0:
        raise MetricError("accuracy is undefined on empty input")
    if y.shape != p.shape:
        raise ValueError("labels and predictions must be matching vectors")
    return float((y == p).mean())


def evaluate_online(instances, params, config, buffers=None):
    """Accuracy pooled over every time step of every instance.

    Each step's prediction is compared against the instance label; steps
    are weighted equally across the whole collection.
    """
    if not instances:
        raise MetricError("online accuracy is undefined on empty input")
    correct = 0
    total = 0
    for inst in instances:
        _, logits = model.forward_online(inst, params, config, buffers)
        preds = model.predict(logits.data, config)
        correct += int((preds == inst.label).sum())
        total += preds.size
    return correct / total
