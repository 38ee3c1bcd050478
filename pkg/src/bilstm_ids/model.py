"""The eleven-layer BiLSTM-CNN hybrid: assembly, initialization, checkpoints.

Default stack for an input of shape ``(time_steps, F)``::

    BatchNorm -> AvgPool1D -> BiLSTM -> BiLSTM -> Conv1D+ReLU -> Conv1D+ReLU
    -> AvgPool1D -> Flatten -> Dense+ReLU -> Dense -> Softmax
"""

from __future__ import annotations

import dataclasses
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import layers as L
from .kvtext import dump_kv, parse_kv
from .numerics import DTYPE, he_uniform, softmax, truncated_normal

REQUIRED_LAYERS = 11
RECURRENT_INIT_STD = 0.05


class BuildError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    input_features: int
    time_steps: int = 10
    bilstm_hidden: tuple = (32, 32)
    conv_kernels: int = 128
    conv_kernel_size: int = 3
    conv_layers: int = 2
    conv_padding: str = "same"
    pool_size: int = 3
    pool_stride: int = 2
    post_conv_pool: bool = True
    dense_sizes: tuple = (64,)
    num_classes: int = 5
    softmax_layer: bool = True
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bilstm_hidden", tuple(int(h) for h in self.bilstm_hidden))
        object.__setattr__(self, "dense_sizes", tuple(int(d) for d in self.dense_sizes))
        ints = {"input_features": self.input_features, "time_steps": self.time_steps,
                "conv_kernels": self.conv_kernels, "conv_kernel_size": self.conv_kernel_size,
                "pool_size": self.pool_size, "pool_stride": self.pool_stride}
        for name, v in ints.items():
            if v < 1:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.conv_layers < 0:
            raise ValueError("conv_layers must be non-negative")
        if any(h < 1 for h in self.bilstm_hidden) or any(d < 1 for d in self.dense_sizes):
            raise ValueError("layer widths must be positive")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.conv_padding not in ("same", "valid"):
            raise ValueError(f"conv_padding must be 'same' or 'valid', got {self.conv_padding!r}")
        if self.layer_count != REQUIRED_LAYERS:
            raise ValueError(f"configuration describes {self.layer_count} layers; "
                             f"the architecture requires {REQUIRED_LAYERS}")

    @property
    def layer_count(self) -> int:
        # batchnorm, pool, flatten, output dense
        n = 4 + len(self.bilstm_hidden) + self.conv_layers + len(self.dense_sizes)
        return n + int(self.post_conv_pool) + int(self.softmax_layer)

    def to_kv(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            out[f.name] = str(v)
        return out

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in kv:
                continue
            raw = kv[f.name].strip()
            default = f.default
            if f.name in ("bilstm_hidden", "dense_sizes"):
                kwargs[f.name] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif isinstance(default, bool):
                if raw.lower() not in ("true", "false"):
                    raise ValueError(f"{f.name}: expected true/false, got {raw!r}")
                kwargs[f.name] = raw.lower() == "true"
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            elif isinstance(default, str):
                kwargs[f.name] = raw
            else:
                kwargs[f.name] = int(raw)
        unknown = set(kv) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# Parameter storage
# ---------------------------------------------------------------------------

class ParamStore:
    """Ordered named tensors, each trainable or not, with gradient buffers for the trainable ones."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, shape, trainable: bool = True) -> np.ndarray:
        if name in self._values:
            raise KeyError(f"duplicate parameter {name!r}")
        self._values[name] = np.zeros(shape, dtype=DTYPE)
        self._trainable[name] = trainable
        return self._values[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __contains__(self, name) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_names(self) -> list[str]:
        return [n for n in self._values if self._trainable[n]]

    def set_grad(self, name: str, grad: np.ndarray) -> None:
        if not self._trainable[name]:
            raise KeyError(f"{name!r} is not trainable")
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self._values[name].shape:
            raise ValueError(f"gradient for {name!r} has shape {grad.shape}, "
                             f"expected {self._values[name].shape}")
        self.grads[name] = grad

    def zero_grads(self) -> None:
        self.grads = {n: np.zeros_like(self._values[n]) for n in self.trainable_names()}

    def size(self, trainable_only: bool = False) -> int:
        return sum(v.size for n, v in self._values.items()
                   if self._trainable[n] or not trainable_only)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self._values.items()}


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self._cache = None

    def declare(self, store: ParamStore, in_shape: tuple) -> tuple:
        """Register parameters and return the per-sample output shape."""
        return in_shape

    def init(self, store: ParamStore, rng) -> None:
        pass

    def param_names(self, store: ParamStore) -> list[str]:
        prefix = self.name + "."
        return [n for n in store.names() if n.startswith(prefix)]

    def describe(self) -> str:
        return self.kind


class BatchNormLayer(Layer):
    kind = "batchnorm"

    def __init__(self, name, momentum=0.99, epsilon=1e-3):
        super().__init__(name)
        self.momentum, self.epsilon = momentum, epsilon

    def declare(self, store, in_shape):
        F = in_shape[-1]
        for p, trainable in (("gamma", True), ("beta", True),
                             ("moving_mean", False), ("moving_var", False)):
            store.add(f"{self.name}.{p}", (F,), trainable)
        return in_shape

    def init(self, store, rng):
        store[f"{self.name}.gamma"][...] = 1.0
        store[f"{self.name}.beta"][...] = 0.0
        store[f"{self.name}.moving_mean"][...] = 0.0
        store[f"{self.name}.moving_var"][...] = 1.0

    def _state(self, store):
        n = self.name
        return L.BatchNormState(store[f"{n}.gamma"], store[f"{n}.beta"],
                                store[f"{n}.moving_mean"], store[f"{n}.moving_var"],
                                self.momentum, self.epsilon)

    def forward(self, store, x, mode):
        y, self._cache = L.batchnorm_forward(self._state(store), x, mode)
        return y

    def backward(self, store, grad):
        dg, db, dx = L.batchnorm_backward(self._cache, grad)
        store.set_grad(f"{self.name}.gamma", dg)
        store.set_grad(f"{self.name}.beta", db)
        return dx


class AvgPoolLayer(Layer):
    kind = "avgpool1d"

    def __init__(self, name, pool, stride):
        super().__init__(name)
        self.pool, self.stride = pool, stride

    def declare(self, store, in_shape):
        if len(in_shape) != 2:
            raise BuildError(f"expects (steps, channels), got {in_shape}")
        return (L.avgpool1d_output_length(in_shape[0], self.pool, self.stride), in_shape[1])

    def forward(self, store, x, mode):
        y, self._cache = L.avgpool1d_forward(x, self.pool, self.stride)
        return y

    def backward(self, store, grad):
        return L.avgpool1d_backward(self._cache, grad)

    def describe(self):
        return f"avgpool1d(pool={self.pool}, stride={self.stride})"


class BiLstmLayer(Layer):
    kind = "bilstm"

    def __init__(self, name, hidden, project_to: Optional[int] = None):
        super().__init__(name)
        self.hidden, self.project_to = hidden, project_to

    def declare(self, store, in_shape):
        if len(in_shape) != 2:
            raise BuildError(f"expects (steps, features), got {in_shape}")
        self.input_dim = in_shape[1]
        for side in ("fwd", "bwd"):
            for p, shape in L.lstm_param_shapes(self.input_dim, self.hidden).items():
                store.add(f"{self.name}.{side}.{p}", shape)
        if self.project_to is None:
            return (in_shape[0], 2 * self.hidden)
        store.add(f"{self.name}.W_fy", (self.project_to, self.hidden))
        store.add(f"{self.name}.W_by", (self.project_to, self.hidden))
        store.add(f"{self.name}.b_y", (self.project_to,))
        return (in_shape[0], self.project_to)

    def init(self, store, rng):
        for name in self.param_names(store):
            leaf = name.rsplit(".", 1)[1]
            arr = store[name]
            if leaf.startswith("U_h"):
                arr[...] = truncated_normal(arr.shape, 0.0, RECURRENT_INIT_STD, rng)
            elif leaf.startswith("W_x"):
                arr[...] = he_uniform(arr.shape, self.input_dim, rng)
            elif leaf in ("W_fy", "W_by"):
                arr[...] = he_uniform(arr.shape, self.hidden, rng)
            else:
                arr[...] = 0.0

    def _params(self, store):
        def side(s):
            return L.LstmParams(**{p: store[f"{self.name}.{s}.{p}"]
                                   for p in L.lstm_param_shapes(1, 1)})
        proj = ()
        if self.project_to is not None:
            proj = tuple(store[f"{self.name}.{p}"] for p in ("W_fy", "W_by", "b_y"))
        return L.BiLstmParams(side("fwd"), side("bwd"), *proj)

    def forward(self, store, x, mode):
        y, self._cache = L.bilstm_forward(self._params(store), x)
        return y

    def backward(self, store, grad):
        g, dx = L.bilstm_backward(self._cache, grad)
        for side, lp in (("fwd", g.forward), ("bwd", g.backward)):
            for p, v in lp.as_dict().items():
                store.set_grad(f"{self.name}.{side}.{p}", v)
        if self.project_to is not None:
            for p in ("W_fy", "W_by", "b_y"):
                store.set_grad(f"{self.name}.{p}", getattr(g, p))
        return dx

    def describe(self):
        return f"bilstm(hidden={self.hidden}, {'concat' if self.project_to is None else 'project'})"


class ConvLayer(Layer):
    kind = "conv1d"

    def __init__(self, name, kernels, size, padding="same", activation="relu"):
        super().__init__(name)
        self.kernels, self.size, self.padding, self.activation = kernels, size, padding, activation

    def declare(self, store, in_shape):
        if len(in_shape) != 2:
            raise BuildError(f"expects (steps, channels), got {in_shape}")
        steps, cin = in_shape
        out_len = L.conv1d_output_length(steps, self.size, self.padding)
        if out_len < 1:
            raise BuildError(f"sequence length {steps} too short for kernel size "
                             f"{self.size} with {self.padding} padding")
        self.fan_in = self.size * cin
        store.add(f"{self.name}.kernel", (self.kernels, self.size, cin))
        store.add(f"{self.name}.bias", (self.kernels,))
        return (out_len, self.kernels)

    def init(self, store, rng):
        k = store[f"{self.name}.kernel"]
        k[...] = he_uniform(k.shape, self.fan_in, rng)
        store[f"{self.name}.bias"][...] = 0.0

    def forward(self, store, x, mode):
        z, cache = L.conv1d_forward(store[f"{self.name}.kernel"], store[f"{self.name}.bias"],
                                    x, self.padding)
        self._cache = (cache, z)
        return np.maximum(z, 0.0) if self.activation == "relu" else z

    def backward(self, store, grad):
        cache, z = self._cache
        if self.activation == "relu":
            grad = grad * (z > 0)
        dk, db, dx = L.conv1d_backward(cache, grad)
        store.set_grad(f"{self.name}.kernel", dk)
        store.set_grad(f"{self.name}.bias", db)
        return dx

    def describe(self):
        act = f"+{self.activation}" if self.activation else ""
        return f"conv1d(kernels={self.kernels}, size={self.size}, {self.padding}){act}"


class FlattenLayer(Layer):
    kind = "flatten"

    def declare(self, store, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, store, x, mode):
        y, self._cache = L.flatten(x, batch_dims=1)
        return y

    def backward(self, store, grad):
        return L.unflatten(grad, self._cache)


class DenseLayer(Layer):
    kind = "dense"

    def __init__(self, name, units, activation=None):
        super().__init__(name)
        self.units, self.activation = units, activation

    def declare(self, store, in_shape):
        if len(in_shape) != 1:
            raise BuildError(f"expects a flat vector, got {in_shape}")
        self.n_in = in_shape[0]
        store.add(f"{self.name}.W", (self.units, self.n_in))
        store.add(f"{self.name}.b", (self.units,))
        return (self.units,)

    def init(self, store, rng):
        W = store[f"{self.name}.W"]
        W[...] = he_uniform(W.shape, self.n_in, rng)
        store[f"{self.name}.b"][...] = 0.0

    def forward(self, store, x, mode):
        act = "relu" if self.activation == "relu" else None
        y, self._cache = L.dense_forward(store[f"{self.name}.W"], store[f"{self.name}.b"], x, act)
        return softmax(y) if self.activation == "softmax" else y

    def backward(self, store, grad):
        # with a softmax activation, grad is taken w.r.t. the pre-softmax logits
        dW, db, dx = L.dense_backward(self._cache, grad)
        store.set_grad(f"{self.name}.W", dW)
        store.set_grad(f"{self.name}.b", db)
        return dx

    def describe(self):
        return f"dense({self.n_in}->{self.units}{', ' + self.activation if self.activation else ''})"


class SoftmaxLayer(Layer):
    kind = "softmax"

    def forward(self, store, x, mode):
        return softmax(x)

    def backward(self, store, grad):
        # grad arrives w.r.t. the logits already (combined softmax + cross-entropy)
        return grad


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class Model:
    def __init__(self, config: ModelConfig, layers: list[Layer], store: ParamStore,
                 shapes: list[tuple]):
        self.config = config
        self.layers = layers
        self.store = store
        self.shapes = shapes            # shapes[k] = per-sample output of layer k
        self.meta: dict[str, str] = {}  # free-form metadata carried by checkpoints
        self._has_cache = False

    @property
    def input_shape(self) -> tuple:
        return (self.config.time_steps, self.config.input_features)

    def forward(self, batch, mode: str = "infer") -> np.ndarray:
        """Class probabilities ``(B, num_classes)`` for ``batch`` of shape ``(B, T, F)``."""
        x = np.asarray(batch, dtype=DTYPE)
        if x.ndim != 3 or x.shape[1:] != self.input_shape:
            raise ValueError(f"batch has shape {x.shape}, expected (B, {self.input_shape[0]}, "
                             f"{self.input_shape[1]})")
        if mode not in ("train", "infer"):
            raise ValueError(f"unknown mode {mode!r}")
        for layer in self.layers:
            x = layer.forward(self.store, x, mode)
        self._has_cache = True
        return x

    def backward(self, grad_logits) -> None:
        """Fill ``store.grads`` from the loss gradient w.r.t. the pre-softmax logits."""
        if not self._has_cache:
            raise RuntimeError("backward called without a preceding forward pass")
        g = np.asarray(grad_logits, dtype=DTYPE)
        self.store.zero_grads()
        for layer in reversed(self.layers):
            g = layer.backward(self.store, g)

    def predict(self, batch) -> np.ndarray:
        return np.argmax(self.forward(batch, "infer"), axis=1)

    def layer_param_counts(self) -> list[tuple[str, str, int, int]]:
        """``(name, description, trainable, total)`` per layer."""
        rows = []
        for layer in self.layers:
            names = layer.param_names(self.store)
            tr = sum(self.store[n].size for n in names if self.store.is_trainable(n))
            tot = sum(self.store[n].size for n in names)
            rows.append((layer.name, layer.describe(), tr, tot))
        return rows


def build_model(config: ModelConfig) -> Model:
    """Assemble and shape-check the layer stack; parameters are zero until ``init_params``."""
    c = config
    layers: list[Layer] = [BatchNormLayer("bn", c.bn_momentum, c.bn_epsilon),
                           AvgPoolLayer("pool1", c.pool_size, c.pool_stride)]
    for i, h in enumerate(c.bilstm_hidden, 1):
        layers.append(BiLstmLayer(f"bilstm{i}", h))
    for i in range(1, c.conv_layers + 1):
        layers.append(ConvLayer(f"conv{i}", c.conv_kernels, c.conv_kernel_size, c.conv_padding))
    if c.post_conv_pool:
        layers.append(AvgPoolLayer("pool2", c.pool_size, c.pool_stride))
    layers.append(FlattenLayer("flatten"))
    for i, units in enumerate(c.dense_sizes, 1):
        layers.append(DenseLayer(f"dense{i}", units, "relu"))
    if c.softmax_layer:
        layers.append(DenseLayer("output", c.num_classes))
        layers.append(SoftmaxLayer("softmax"))
    else:
        layers.append(DenseLayer("output", c.num_classes, "softmax"))

    store = ParamStore()
    shapes = []
    shape = (c.time_steps, c.input_features)
    prev = "input"
    for layer in layers:
        try:
            shape = layer.declare(store, shape)
        except (ValueError, L.ShapeError) as exc:
            raise BuildError(f"layer {layer.name!r} cannot accept the output {shape} "
                             f"of {prev!r}: {exc}") from None
        shapes.append(shape)
        prev = layer.name
    if len(layers) != REQUIRED_LAYERS:
        raise BuildError(f"built {len(layers)} layers, expected {REQUIRED_LAYERS}")
    return Model(config, layers, store, shapes)


def init_params(model: Model, rng) -> None:
    """Recurrent matrices ~ truncated normal(0, 0.05); kernels and feedforward weights ~ He uniform; biases 0."""
    for layer in model.layers:
        layer.init(model.store, rng)


def count_params(model: Model) -> tuple[int, int]:
    """``(trainable, total)``; total includes the batch-norm moving statistics."""
    return model.store.size(trainable_only=True), model.store.size()


def forward(model: Model, batch, mode: str = "infer") -> np.ndarray:
    return model.forward(batch, mode)


def backward(model: Model, loss_grad) -> None:
    model.backward(loss_grad)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"BLCN"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


def checkpoint_bytes(model: Model) -> bytes:
    kv = {f"model.{k}": v for k, v in model.config.to_kv().items()}
    kv.update({f"meta.{k}": v for k, v in model.meta.items()})
    config = dump_kv(kv).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(config)), config]
    for name, value in model.store.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<Q", len(nb)))
        parts.append(nb)
        parts.append(struct.pack(f"<{1 + value.ndim}Q", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def model_from_bytes(data: bytes) -> Model:
    if len(data) < len(MAGIC) + 2 + 4 + 4:
        raise ChecksumError("checkpoint is truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint CRC-32 mismatch (file corrupt or truncated)")
    if body[:4] != MAGIC:
        raise CheckpointError(f"bad magic {body[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    (clen,) = struct.unpack_from("<I", body, 6)
    pos = 10
    kv = parse_kv(body[pos:pos + clen].decode("utf-8"))
    pos += clen
    model_kv = {k[6:]: v for k, v in kv.items() if k.startswith("model.")}
    model = build_model(ModelConfig.from_kv(model_kv))
    model.meta = {k[5:]: v for k, v in kv.items() if k.startswith("meta.")}

    values = {}
    try:
        while pos < len(body):
            (nlen,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            dims = struct.unpack_from(f"<{rank}Q", body, pos)
            pos += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            raw = body[pos:pos + 8 * n]
            if len(raw) != 8 * n:
                raise CheckpointError(f"parameter {name!r} data truncated")
            pos += 8 * n
            values[name] = np.frombuffer(raw, dtype="<f8").reshape(dims)
    except struct.error as exc:
        raise CheckpointError(f"malformed parameter section: {exc}") from None

    if list(values) != model.store.names():
        raise CheckpointError("parameter names in checkpoint do not match the configured architecture")
    for name, v in values.items():
        if v.shape != model.store[name].shape:
            raise CheckpointError(f"parameter {name!r} has shape {v.shape}, "
                                  f"architecture expects {model.store[name].shape}")
        model.store[name][...] = v
    return model


def load_checkpoint(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
