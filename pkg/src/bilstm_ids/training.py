"""Loss, optimizers, dataset splitting, the training loop and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import ConfusionMatrix, Metrics, binary_metrics
from .model import Model
from .numerics import make_rng

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    split_ratios: tuple = (0.6, 0.2, 0.2)
    shuffle_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be at least 2 for batch normalization, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        _check_ratios(self.split_ratios)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.X) != len(self.y):
            raise ValueError("X and y differ in length")

    def __len__(self):
        return len(self.y)

    def __getitem__(self, idx):
        return Dataset(self.X[idx], self.y[idx])


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    steps: int = 0

    def __len__(self):
        return len(self.train_loss)


# ---------------------------------------------------------------------------
# Loss and optimizers
# ---------------------------------------------------------------------------

def one_hot(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")
    return np.eye(num_classes)[y]


def cross_entropy(probs, onehot):
    """Mean categorical cross-entropy and its gradient w.r.t. the softmax logits."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(onehot, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2:
        raise ValueError(f"shape mismatch: probs {p.shape} vs onehot {t.shape}")
    if not (np.all((t == 0) | (t == 1)) and np.all(t.sum(axis=1) == 1)):
        raise ValueError("onehot rows must contain exactly one 1")
    B = p.shape[0]
    loss = -np.sum(t * np.log(np.maximum(p, LOG_FLOOR))) / B
    return float(loss), (p - t) / B


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def _trainable(params, grads):
    if hasattr(params, "trainable_names"):
        names = params.trainable_names()
        extra = set(grads) - set(names)
        if extra:
            raise KeyError(f"gradients given for non-trainable tensors: {sorted(extra)}")
        return names
    return list(grads)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, t: int | None = None) -> None:
    """Bias-corrected Adam update, in place.

    ``params`` is a ParamStore (only trainable tensors are touched) or a
    plain dict of arrays. ``t`` defaults to the state's step count + 1.
    """
    state.t = state.t + 1 if t is None else t
    if state.t < 1:
        raise ValueError("adam step count must be >= 1")
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name in _trainable(params, grads):
        p = params[name]
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape or g.shape != p.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def sgd_step(params, grads, lr: float) -> None:
    for name in _trainable(params, grads):
        params[name] -= lr * grads[name]


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _check_ratios(ratios):
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative values summing to 1, got {ratios}")


def split_sizes(n: int, ratios=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    _check_ratios(ratios)
    # tolerance guards products like 0.6*n landing a hair below an integer
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_val = math.floor(n * ratios[1] + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_indices(n: int, ratios=(0.6, 0.2, 0.2), seed: int = 0, labels=None,
                  min_per_class: int = 5):
    """Shuffle ``range(n)`` and cut it into train/val/test index arrays.

    When ``labels`` are given and every class has at least
    ``min_per_class`` members, the order interleaves classes by their
    within-class rank so each contiguous slice is (near) stratified.
    """
    if n < 5:
        raise ValueError(f"need at least 5 samples to split, got {n}")
    n_train, n_val, _ = split_sizes(n, ratios)
    rng = make_rng(seed, "split")
    order = rng.permutation(n)
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != n:
            raise ValueError("labels length differs from sample count")
        classes, counts = np.unique(labels, return_counts=True)
        if counts.min() >= min_per_class:
            rank = np.empty(n)
            for c, cnt in zip(classes, counts):
                members = order[labels[order] == c]
                rank[members] = (np.arange(cnt) + 0.5) / cnt
            # stable sort keeps the random order among equal ranks
            order = order[np.argsort(rank[order], kind="stable")]
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def _take(samples, idx):
    # arrays and sample sets index by array; plain sequences do not
    if isinstance(samples, np.ndarray) or hasattr(samples, "X"):
        return samples[idx]
    return [samples[i] for i in idx]


def split_dataset(samples, ratios=(0.6, 0.2, 0.2), seed: int = 0, labels=None):
    """Split any indexable collection; ``Dataset`` objects stratify by their labels."""
    if labels is None and hasattr(samples, "y"):
        labels = samples.y
    tr, va, te = split_indices(len(samples), ratios, seed, labels)
    return _take(samples, tr), _take(samples, va), _take(samples, te)


# ---------------------------------------------------------------------------
# Training loop and evaluation
# ---------------------------------------------------------------------------

def predict_proba(model: Model, X, chunk: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate([model.forward(X[i:i + chunk], "infer")
                           for i in range(0, len(X), chunk)])


def _loss_acc(model: Model, data) -> tuple[float, float]:
    if len(data) == 0:
        return float("nan"), float("nan")
    probs = predict_proba(model, data.X)
    loss, _ = cross_entropy(probs, one_hot(data.y, model.config.num_classes))
    return loss, float(np.mean(np.argmax(probs, axis=1) == data.y))


def train(model: Model, train_set, val_set, config: TrainConfig = TrainConfig(),
          on_epoch=None) -> TrainHistory:
    """Mini-batch training; returns per-epoch loss and accuracy.

    Train metrics are sample-weighted averages over the epoch's train-mode
    batches; validation metrics come from an infer-mode pass after the
    epoch. A final batch smaller than 2 is skipped.
    """
    n = len(train_set)
    if n == 0:
        raise ValueError("empty training split")
    C = model.config.num_classes
    rng = make_rng(config.shuffle_seed, "shuffle")
    state = AdamState()
    hist = TrainHistory()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        tot_loss = tot_correct = seen = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                continue
            xb, yb = train_set.X[idx], train_set.y[idx]
            probs = model.forward(xb, "train")
            loss, grad = cross_entropy(probs, one_hot(yb, C))
            model.backward(grad)
            if config.optimizer == "adam":
                adam_step(model.store, model.store.grads, state, config.learning_rate)
            else:
                sgd_step(model.store, model.store.grads, config.learning_rate)
            hist.steps += 1
            tot_loss += loss * len(idx)
            tot_correct += float(np.sum(np.argmax(probs, axis=1) == yb))
            seen += len(idx)
        if seen == 0:
            raise ValueError("training split too small to form a batch of 2")
        vl, va = _loss_acc(model, val_set)
        hist.train_loss.append(tot_loss / seen)
        hist.train_accuracy.append(tot_correct / seen)
        hist.val_loss.append(vl)
        hist.val_accuracy.append(va)
        log.debug("epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f",
                  epoch + 1, hist.train_loss[-1], hist.train_accuracy[-1], vl, va)
        if on_epoch is not None:
            on_epoch(epoch + 1, hist)
    return hist


def evaluate(model: Model, samples, normal: int = 0) -> tuple[ConfusionMatrix, Metrics]:
    """Multi-class confusion matrix plus binary normal/anomaly metrics."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate an empty sample set")
    pred = np.argmax(predict_proba(model, samples.X), axis=1)
    cm = ConfusionMatrix.from_predictions(samples.y, pred, model.config.num_classes)
    return cm, binary_metrics(cm, normal)


HISTORY_HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]


def export_history(history: TrainHistory, path) -> None:
    if len(history) == 0:
        raise ValueError("empty history")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for e in range(len(history)):
            w.writerow([e + 1] + [f"{v:.6f}" for v in (
                history.train_loss[e], history.train_accuracy[e],
                history.val_loss[e], history.val_accuracy[e])])


def load_history(path) -> TrainHistory:
    hist = TrainHistory()
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        if next(r, None) != HISTORY_HEADER:
            raise ValueError(f"{path}: not a history file")
        for row in r:
            hist.train_loss.append(float(row[1]))
            hist.train_accuracy.append(float(row[2]))
            hist.val_loss.append(float(row[3]))
            hist.val_accuracy.append(float(row[4]))
    return hist
