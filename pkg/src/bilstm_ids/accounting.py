"""Closed-form parameter counts and the width search against reference counts.

Counts here are computed from a ``ModelConfig`` by arithmetic alone and
never touch a built model, so they can be checked against
``model.count_params``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .model import REQUIRED_LAYERS, ModelConfig

REFERENCE_COUNTS = (42_180, 42_182)


def lstm_count(d: int, u: int) -> int:
    """Four gates, each with input weights, recurrent weights and a bias."""
    return 4 * u * (d + u + 1)


def bilstm_count(d: int, u: int) -> int:
    return 2 * lstm_count(d, u)


def conv_count(cin: int, kernels: int, size: int) -> int:
    return (size * cin + 1) * kernels


def _pool_len(length: int, pool: int, stride: int) -> int:
    if length < pool:
        return 0
    return (length - pool) // stride + 1


def _trunk(F, time_steps, hidden, kernels, size, n_conv, padding, pool, stride, post):
    """Trainable count up to the flatten layer and the flattened width."""
    trainable = 2 * F
    length = _pool_len(time_steps, pool, stride)
    if length < 1:
        raise ValueError("first pooling window longer than the sequence")
    width = F
    for h in hidden:
        trainable += bilstm_count(width, h)
        width = 2 * h
    for _ in range(n_conv):
        trainable += conv_count(width, kernels, size)
        width = kernels
        if padding == "valid":
            length -= size - 1
        if length < 1:
            raise ValueError("convolution kernel longer than the sequence")
    if post:
        length = _pool_len(length, pool, stride)
        if length < 1:
            raise ValueError("second pooling window longer than the sequence")
    return trainable, width * length


def _head(width: int, dense, num_classes: int) -> int:
    n = 0
    for units in dense:
        n += (width + 1) * units
        width = units
    return n + (width + 1) * num_classes


def closed_form_counts(cfg: ModelConfig) -> tuple[int, int]:
    """``(trainable, total)`` for ``cfg``; raises ValueError on an impossible shape chain."""
    trainable, flat = _trunk(cfg.input_features, cfg.time_steps, cfg.bilstm_hidden,
                             cfg.conv_kernels, cfg.conv_kernel_size, cfg.conv_layers,
                             cfg.conv_padding, cfg.pool_size, cfg.pool_stride, cfg.post_conv_pool)
    trainable += _head(flat, cfg.dense_sizes, cfg.num_classes)
    # batch-norm moving mean and variance
    return trainable, trainable + 2 * cfg.input_features


@dataclass(frozen=True)
class SearchResult:
    target: tuple[int, int]
    input_features: int
    evaluated: int
    matches: list

    def explain_gap(self) -> str:
        gap = self.target[1] - self.target[0]
        if gap % 2:
            return f"non-trainable gap {gap} is odd: not explainable by batch-norm statistics"
        return (f"non-trainable gap {gap} = batch-norm moving mean + moving variance over "
                f"{gap // 2} input feature(s); the search therefore fixes input_features={gap // 2}")


def default_dense_grid(n_dense: int):
    if n_dense == 0:
        return [()]
    if n_dense == 1:
        return [(w,) for w in range(1, 257)]
    return list(itertools.product([2 ** i for i in range(9)], repeat=n_dense))


def search_widths(target: tuple[int, int] = REFERENCE_COUNTS,
                   hidden_range=range(1, 65),
                   bilstm_layers=(1, 2, 3),
                   conv_layers=(1, 2),
                   num_classes=(2, 5),
                   paddings=("same", "valid"),
                   base: ModelConfig | None = None,
                   dense_grid=default_dense_grid,
                   limit: int | None = None) -> SearchResult:
    """Enumerate eleven-layer configurations whose closed-form counts equal ``target``.

    The trainable/total gap fixes the input width (batch-norm keeps two
    non-trainable statistics per feature). The grid varies BiLSTM depth
    and an equal hidden width, conv depth and padding, the optional second
    pool, hidden dense widths and the class count; the remaining
    hyperparameters (128 kernels of width 3, pool 3 stride 2, 10 steps)
    come from ``base``.
    """
    trainable, total = target
    gap = total - trainable
    if gap <= 0 or gap % 2:
        return SearchResult(target, 0, 0, [])
    F = gap // 2
    base = base or ModelConfig(input_features=F)
    matches = []
    evaluated = 0
    for nb, nc, post, pad, C in itertools.product(bilstm_layers, conv_layers, (True, False),
                                                  paddings, num_classes):
        n_dense = REQUIRED_LAYERS - (5 + nb + nc + int(post))
        if n_dense < 0:
            continue
        grid = dense_grid(n_dense)
        for h in hidden_range:
            try:
                trunk, flat = _trunk(F, base.time_steps, (h,) * nb, base.conv_kernels,
                                     base.conv_kernel_size, nc, pad, base.pool_size,
                                     base.pool_stride, post)
            except ValueError:
                continue
            if trunk > trainable:
                continue
            for dense in grid:
                evaluated += 1
                if trunk + _head(flat, dense, C) != trainable:
                    continue
                matches.append(ModelConfig(
                    input_features=F, time_steps=base.time_steps, bilstm_hidden=(h,) * nb,
                    conv_kernels=base.conv_kernels, conv_kernel_size=base.conv_kernel_size,
                    conv_layers=nc, conv_padding=pad, pool_size=base.pool_size,
                    pool_stride=base.pool_stride, post_conv_pool=post,
                    dense_sizes=dense, num_classes=C))
                if limit is not None and len(matches) >= limit:
                    return SearchResult(target, F, evaluated, matches)
    return SearchResult(target, F, evaluated, matches)
