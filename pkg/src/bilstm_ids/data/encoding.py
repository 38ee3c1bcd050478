"""Feature encoding and the ten-step sequence builder.

Schema v1, 15 features per flow window:
  src_ip octets / 255 (4), dst_ip octets / 255 (4), dst_port / 65535,
  then z-scores of packet_count, byte_count, mean_iat, distinct_ports,
  syn_ratio and arp_count using training-split statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..training import split_indices
from .records import FlowRecord

SCHEMA_VERSION = 1
ZSCORED = ("packet_count", "byte_count", "mean_iat", "distinct_ports", "syn_ratio", "arp_count")
FEATURE_NAMES = ([f"src_ip_{i}" for i in range(4)] + [f"dst_ip_{i}" for i in range(4)]
                 + ["dst_port"] + list(ZSCORED))
NUM_FEATURES = len(FEATURE_NAMES)
STD_FLOOR = 1e-6


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class NormStats:
    mean: tuple
    std: tuple
    schema_version: int = SCHEMA_VERSION

    def to_kv(self) -> dict[str, str]:
        kv = {"schema_version": str(self.schema_version)}
        for name, m, s in zip(ZSCORED, self.mean, self.std):
            kv[f"mean.{name}"] = repr(float(m))
            kv[f"std.{name}"] = repr(float(s))
        return kv

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "NormStats":
        version = int(kv.get("schema_version", -1))
        if version != SCHEMA_VERSION:
            raise SchemaError(f"feature schema version {version}, this build uses {SCHEMA_VERSION}")
        try:
            return cls(tuple(float(kv[f"mean.{n}"]) for n in ZSCORED),
                       tuple(float(kv[f"std.{n}"]) for n in ZSCORED), version)
        except KeyError as exc:
            raise SchemaError(f"normalization statistic {exc} missing") from None


def _raw_counters(flows) -> np.ndarray:
    return np.array([[f.packet_count, f.byte_count, f.mean_inter_arrival,
                      f.distinct_dst_ports, f.syn_ratio, f.arp_count] for f in flows],
                    dtype=np.float64).reshape(-1, len(ZSCORED))


def fit_stats(flows) -> NormStats:
    """Population mean and std (floored at 1e-6) of the z-scored counters."""
    raw = _raw_counters(flows)
    if len(raw) == 0:
        raise ValueError("cannot fit normalization statistics on zero flows")
    std = np.maximum(raw.std(axis=0), STD_FLOOR)
    return NormStats(tuple(raw.mean(axis=0)), tuple(std))


def _octets(ips) -> np.ndarray:
    out = np.zeros((len(ips), 4))
    for i, ip in enumerate(ips):
        parts = ip.split(".")
        if len(parts) != 4:
            raise ValueError(f"not an IPv4 address: {ip!r}")
        out[i] = [int(p) for p in parts]
    if np.any(out < 0) or np.any(out > 255):
        raise ValueError("IPv4 octet out of range")
    return out / 255.0


def encode_matrix(flows, stats: NormStats) -> np.ndarray:
    """Encode many flows at once; shape ``(len(flows), NUM_FEATURES)``."""
    if stats.schema_version != SCHEMA_VERSION:
        raise SchemaError(f"feature schema version {stats.schema_version}, "
                          f"this build uses {SCHEMA_VERSION}")
    flows = list(flows)
    src = _octets([f.src_ip for f in flows])
    dst = _octets([f.dst_ip for f in flows])
    port = np.array([[f.dst_port / 65535.0] for f in flows]).reshape(-1, 1)
    z = (_raw_counters(flows) - np.asarray(stats.mean)) / np.asarray(stats.std)
    return np.hstack([src, dst, port, z])


def encode_features(flow: FlowRecord, stats: NormStats) -> np.ndarray:
    return encode_matrix([flow], stats)[0]


# ---------------------------------------------------------------------------
# Sequences
# ---------------------------------------------------------------------------

@dataclass
class SequenceSet:
    """Encoded samples ``X (N, T, F)``, labels ``y`` (-1 when unknown) and a real-step ``mask``."""
    X: np.ndarray
    y: np.ndarray
    mask: np.ndarray
    flow_index: Optional[np.ndarray] = None   # (N, T) flow positions, -1 for padding

    def __len__(self):
        return len(self.y)

    def __getitem__(self, idx):
        fi = None if self.flow_index is None else self.flow_index[idx]
        return SequenceSet(self.X[idx], self.y[idx], self.mask[idx], fi)

    @property
    def labeled(self) -> bool:
        return bool(np.all(self.y >= 0))


def window_indices(flows, time_steps: int = 10, padding: str = "back"):
    """Group flows by (src_ip, dst_ip, dst_port), order each by window_start and slide.

    A key with ``m >= time_steps`` windows yields ``m - time_steps + 1``
    samples; a shorter key yields one sample padded with -1 slots, after
    its real steps by default (``padding="back"``) or before them
    (``"front"``). Back padding keeps a short key's data inside the
    windows of the first pooling layer, which drops the trailing step of
    a ten-step sequence. Returns ``(index (N, T), labels (N,))``, labels
    taken from each sample's last real step (-1 when unlabeled).
    """
    if time_steps < 1:
        raise ValueError("time_steps must be positive")
    if padding not in ("back", "front"):
        raise ValueError(f"padding must be 'back' or 'front', got {padding!r}")
    groups: dict[tuple, list[int]] = {}
    for i, f in enumerate(flows):
        groups.setdefault(f.key, []).append(i)
    rows = []
    for members in groups.values():
        members = sorted(members, key=lambda i: flows[i].window_start)
        if len(members) < time_steps:
            pad = [-1] * (time_steps - len(members))
            rows.append(members + pad if padding == "back" else pad + members)
        else:
            rows.extend(members[s:s + time_steps] for s in range(len(members) - time_steps + 1))
    idx = np.array(rows, dtype=np.int64).reshape(-1, time_steps)
    return idx, _last_labels(flows, idx)


def _last_labels(flows, idx) -> np.ndarray:
    out = np.full(len(idx), -1, dtype=np.int64)
    for n, row in enumerate(idx):
        last = flows[row[row >= 0][-1]]
        if last.label is not None:
            out[n] = int(last.label)
    return out


def materialize(flows, idx: np.ndarray, stats: NormStats, labels=None) -> SequenceSet:
    enc = encode_matrix(flows, stats) if len(flows) else np.zeros((0, NUM_FEATURES))
    # a zero row appended at the end serves every -1 padding slot
    table = np.vstack([enc, np.zeros((1, NUM_FEATURES))])
    X = table[np.where(idx >= 0, idx, len(enc))]
    if labels is None:
        labels = _last_labels(flows, idx)
    return SequenceSet(X, np.asarray(labels, dtype=np.int64), idx >= 0, idx)


def build_sequences(flows, stats: NormStats, time_steps: int = 10,
                    padding: str = "back") -> SequenceSet:
    flows = list(flows)
    idx, labels = window_indices(flows, time_steps, padding)
    return materialize(flows, idx, stats, labels)


def prepare_splits(flows, time_steps: int = 10, ratios=(0.6, 0.2, 0.2), seed: int = 0,
                   padding: str = "back"):
    """Sequence, split, then fit normalization on flows seen by the training split only.

    Returns ``(train, val, test, stats)``.
    """
    flows = list(flows)
    idx, labels = window_indices(flows, time_steps, padding)
    tr, va, te = split_indices(len(idx), ratios, seed, labels)
    used = np.unique(idx[tr][idx[tr] >= 0])
    stats = fit_stats([flows[i] for i in used])
    parts = [materialize(flows, idx[s], stats, labels[s]) for s in (tr, va, te)]
    return parts[0], parts[1], parts[2], stats
