"""Dense float64 arithmetic, activations and weight initializers.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Random
streams come from numpy's PCG64 bit generator seeded through
``SeedSequence``, which is stable across platforms and numpy releases.
"""

from __future__ import annotations

import zlib

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    t = np.asarray(x, dtype=DTYPE)
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains NaN or Inf")
    return t


def make_rng(seed: int, stream: str | None = None) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``.

    A named ``stream`` ("init", "shuffle", "synth", ...) derives an
    independent child stream, so components can be reseeded separately
    from one master seed.
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    entropy = [int(seed)]
    if stream is not None:
        entropy.append(zlib.crc32(stream.encode("utf-8")))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    # two-branch form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=DTYPE))


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def hadamard(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def softmax(logits, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    if z.size == 0 or z.shape[axis] == 0:
        raise ValueError("softmax of an empty input")
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def truncated_normal(shape, mean: float, std: float, rng: np.random.Generator,
                     bound: float = 2.0) -> np.ndarray:
    """Normal(mean, std) samples, redrawing any that fall outside mean +/- bound*std."""
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    shape = (int(shape),) if np.isscalar(shape) else tuple(shape)
    out = rng.normal(mean, std, size=shape)
    lim = bound * std
    bad = np.abs(out - mean) > lim
    while np.any(bad):
        out[bad] = rng.normal(mean, std, size=int(bad.sum()))
        bad = np.abs(out - mean) > lim
    return out.astype(DTYPE, copy=False)


def he_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples on [-sqrt(6/fan_in), sqrt(6/fan_in)]."""
    if int(fan_in) != fan_in or fan_in <= 0:
        raise ValueError(f"fan_in must be a positive integer, got {fan_in}")
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE, copy=False)
