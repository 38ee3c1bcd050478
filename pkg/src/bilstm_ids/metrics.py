"""Confusion matrices, binary normal/anomaly metrics and summary reports."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kvtext import dump_kv

REFERENCE_ACCURACY = 0.9893
COMPARABLE_BAND = 0.03
REPORT_ROWS = ("Accuracy", "Precision", "Recall", "F1-Score", "train parameters", "all parameters")
OPEN_ARCHITECTURE_QUESTIONS = (
    "per-layer widths behind the reported parameter counts are not stated",
    "what one of the ten time steps represents (packet or flow window) is not stated",
    "loss function and optimizer are not stated",
    "conv padding and activation are not stated",
)


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_predictions(cls, y_true, y_pred, num_classes: int) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ValueError("y_true and y_pred differ in length")
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def binary(self, normal: int = 0) -> "ConfusionMatrix":
        """Collapse to 2x2 with index 0 = normal and index 1 = anomaly (every other class)."""
        anomaly = [c for c in range(self.counts.shape[0]) if c != normal]
        c = self.counts
        return ConfusionMatrix([
            [c[normal, normal], c[normal, anomaly].sum()],
            [c[anomaly, normal].sum(), c[np.ix_(anomaly, anomaly)].sum()],
        ])

    def binary_counts(self, normal: int = 0) -> tuple[int, int, int, int]:
        """``(tp, tn, fp, fn)`` with anomaly as the positive class."""
        b = self.binary(normal).counts
        return int(b[1, 1]), int(b[0, 0]), int(b[0, 1]), int(b[1, 0])


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    tn: int
    fp: int
    fn: int
    # metrics whose denominator was zero; they are reported as 0.0
    undefined: tuple = field(default_factory=tuple)


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics_from_counts(tp: int, tn: int, fp: int, fn: int) -> Metrics:
    undefined: list[str] = []
    accuracy = _ratio(tp + tn, tp + tn + fp + fn, "accuracy", undefined)
    recall = _ratio(tp, tp + fn, "recall", undefined)
    precision = _ratio(tp, tp + fp, "precision", undefined)
    if precision + recall == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * (precision * recall) / (precision + recall)
    return Metrics(accuracy, precision, recall, f1, tp, tn, fp, fn, tuple(undefined))


def binary_metrics(cm: ConfusionMatrix, normal: int = 0) -> Metrics:
    return metrics_from_counts(*cm.binary_counts(normal))


def per_class_metrics(cm: ConfusionMatrix) -> list[Metrics]:
    """One-vs-rest metrics for each class."""
    c = cm.counts
    out = []
    for k in range(c.shape[0]):
        tp = int(c[k, k])
        fp = int(c[:, k].sum()) - tp
        fn = int(c[k, :].sum()) - tp
        tn = cm.total - tp - fp - fn
        out.append(metrics_from_counts(tp, tn, fp, fn))
    return out


def summary_report(trials: list[Metrics], param_counts: tuple[int, int],
                   compare: bool = False) -> dict[str, str]:
    """Key/value report: the four metrics plus trainable and total parameter counts.

    With several trials the top-level rows carry the mean and each trial
    is listed under ``trial<k>.``.
    """
    if not trials:
        raise ValueError("no trials to report")

    def mean(attr):
        return float(np.mean([getattr(m, attr) for m in trials]))

    rep = {
        "Accuracy": f"{mean('accuracy'):.6f}",
        "Precision": f"{mean('precision'):.6f}",
        "Recall": f"{mean('recall'):.6f}",
        "F1-Score": f"{mean('f1'):.6f}",
        "train parameters": str(param_counts[0]),
        "all parameters": str(param_counts[1]),
    }
    if len(trials) > 1:
        rep["trials"] = str(len(trials))
        for k, m in enumerate(trials, 1):
            for attr, row in (("accuracy", "Accuracy"), ("precision", "Precision"),
                              ("recall", "Recall"), ("f1", "F1-Score")):
                rep[f"trial{k}.{row}"] = f"{getattr(m, attr):.6f}"
    undefined = sorted({u for m in trials for u in m.undefined})
    if undefined:
        rep["undefined"] = ",".join(undefined)
    if compare:
        acc = mean("accuracy")
        if abs(acc - REFERENCE_ACCURACY) <= COMPARABLE_BAND:
            rep["status"] = "paper-comparable"
        else:
            rep["status"] = "divergent"
            rep["divergence_note"] = (
                f"accuracy {acc:.4f} is more than {COMPARABLE_BAND * 100:.0f} points from "
                f"{REFERENCE_ACCURACY:.4f}; open questions: " + "; ".join(OPEN_ARCHITECTURE_QUESTIONS))
    return rep


def format_report(rep: dict[str, str], cm: ConfusionMatrix | None = None,
                  class_names=None) -> str:
    """Metric and parameter rows first, then any extra keys, then the confusion matrix."""
    head = {k: rep[k] for k in REPORT_ROWS}
    rest = {k: v for k, v in rep.items() if k not in head}
    text = dump_kv(head, sort=False) + dump_kv(rest)
    if cm is not None:
        names = class_names or [str(i) for i in range(cm.counts.shape[0])]
        for i, row in enumerate(cm.counts):
            text += f"confusion.{names[i]}=" + ",".join(str(int(v)) for v in row) + "\n"
    return text
