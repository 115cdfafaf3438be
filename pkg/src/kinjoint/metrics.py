"""Confusion matrices, F-beta scores and fold aggregation.

Conventions for undefined scores: a class with no true positives scores 0 if
it was expected or predicted at all, and 1 if it is absent from both labels
and predictions. Macro averages run over the *occupied* classes only (present
in labels or predictions), so empty classes neither help nor hurt.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

NUM_CLASSES = 5
CLASS_NAMES = ["negative", "F-D", "F-S", "M-D", "M-S"]
DEFAULT_BETA = 10.0


def confusion(preds, labels, num_classes=NUM_CLASSES):
    """counts[t, p] = number of samples with true class t predicted as p."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"confusion: {preds.size} predictions for {labels.size} labels")
    for name, arr in (("prediction", preds), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"confusion: {name} outside 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def f_beta(cm, cls, beta=1.0):
    if beta <= 0:
        raise ValueError("beta must be positive")
    cm = np.asarray(cm)
    tp = float(cm[cls, cls])
    fp = float(cm[:, cls].sum()) - tp
    fn = float(cm[cls, :].sum()) - tp
    if tp == 0:
        return 0.0 if fp + fn > 0 else 1.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    b2 = beta * beta
    return (1 + b2) * precision * recall / (b2 * precision + recall)


def occupied_classes(cm):
    cm = np.asarray(cm)
    return [c for c in range(cm.shape[0]) if cm[c, :].sum() > 0 or cm[:, c].sum() > 0]


@dataclass
class MetricsReport:
    accuracy: float
    per_class_f_beta: list
    per_class_f1: list
    macro_f1: float
    f_beta_mean_positive: float
    f_beta_all: float
    beta: float = DEFAULT_BETA
    counts: list = field(default_factory=list)

    @property
    def total(self):
        return int(np.sum(self.counts))

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _mean_over(values, classes):
    return float(np.mean([values[c] for c in classes]))


def report(cm, beta=DEFAULT_BETA):
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        raise ValueError("report: confusion matrix is empty")
    fb = [f_beta(cm, c, beta) for c in range(cm.shape[0])]
    f1 = [f_beta(cm, c, 1.0) for c in range(cm.shape[0])]
    occ = occupied_classes(cm)
    occ_pos = [c for c in occ if c >= 1] or list(range(1, cm.shape[0]))
    return MetricsReport(
        accuracy=float(np.trace(cm) / total),
        per_class_f_beta=fb,
        per_class_f1=f1,
        macro_f1=_mean_over(f1, occ),
        f_beta_mean_positive=_mean_over(fb, occ_pos),
        f_beta_all=_mean_over(fb, occ),
        beta=float(beta),
        counts=cm.tolist(),
    )


def aggregate_folds(reports):
    """Unweighted mean of every metric across folds; counts are summed.

    Means use correctly rounded sums, so fold order cannot change the result.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate_folds: no reports")
    betas = {r.beta for r in reports}
    if len(betas) != 1:
        raise ValueError(f"aggregate_folds: mixed beta values {sorted(betas)}")

    n = len(reports)

    def m(attr):
        return math.fsum(getattr(r, attr) for r in reports) / n

    def mv(attr):
        return [math.fsum(col) / n for col in zip(*(getattr(r, attr) for r in reports))]

    return MetricsReport(
        accuracy=m("accuracy"),
        per_class_f_beta=mv("per_class_f_beta"),
        per_class_f1=mv("per_class_f1"),
        macro_f1=m("macro_f1"),
        f_beta_mean_positive=m("f_beta_mean_positive"),
        f_beta_all=m("f_beta_all"),
        beta=reports[0].beta,
        counts=np.sum([r.counts for r in reports], axis=0).astype(np.int64).tolist(),
    )


def confusion_csv(cm, positives_only=False):
    """Confusion matrix as CSV text; ``positives_only`` drops the negative row and column."""
    cm = np.asarray(cm)
    classes = list(range(1, NUM_CLASSES)) if positives_only else list(range(NUM_CLASSES))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + [CLASS_NAMES[c] for c in classes])
    for t in classes:
        w.writerow([CLASS_NAMES[t]] + [int(cm[t, p]) for p in classes])
    return buf.getvalue()
