"""Forward and backward passes for the layers of the hybrid network.

Every operation accepts either a single sample or a batch: the feature
axis is always last and any leading axes are treated as batch axes.
Forward functions return ``(output, cache)``; backward functions take
that cache plus the upstream gradient.

Matrices follow the column convention ``y = W x + b`` with ``W`` of shape
``(out, in)``; on row-major batches this is computed as ``x @ W.T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .numerics import DTYPE, ShapeError, relu, sigmoid

# ---------------------------------------------------------------------------
# LSTM cell
# ---------------------------------------------------------------------------

GATES = ("i", "g", "f", "o")


@dataclass
class LstmParams:
    W_xi: np.ndarray
    W_xg: np.ndarray
    W_xf: np.ndarray
    W_xo: np.ndarray
    U_hi: np.ndarray
    U_hg: np.ndarray
    U_hf: np.ndarray
    U_ho: np.ndarray
    b_i: np.ndarray
    b_g: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        h, d = np.shape(self.W_xi)
        for g in GATES:
            if np.shape(getattr(self, f"W_x{g}")) != (h, d):
                raise ShapeError(f"W_x{g} has shape {np.shape(getattr(self, f'W_x{g}'))}, expected {(h, d)}")
            if np.shape(getattr(self, f"U_h{g}")) != (h, h):
                raise ShapeError(f"U_h{g} has shape {np.shape(getattr(self, f'U_h{g}'))}, expected {(h, h)}")
            if np.shape(getattr(self, f"b_{g}")) != (h,):
                raise ShapeError(f"b_{g} has shape {np.shape(getattr(self, f'b_{g}'))}, expected {(h,)}")

    @property
    def hidden_dim(self) -> int:
        return self.W_xi.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_xi.shape[1]

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        return cls(**{name: np.zeros(shape) for name, shape in
                      lstm_param_shapes(input_dim, hidden_dim).items()})

    def as_dict(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "LstmParams":
        return LstmParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def add_(self, other: "LstmParams") -> None:
        for k, v in other.as_dict().items():
            getattr(self, k)[...] += v


def lstm_param_shapes(input_dim: int, hidden_dim: int) -> dict[str, tuple]:
    shapes = {}
    for g in GATES:
        shapes[f"W_x{g}"] = (hidden_dim, input_dim)
    for g in GATES:
        shapes[f"U_h{g}"] = (hidden_dim, hidden_dim)
    for g in GATES:
        shapes[f"b_{g}"] = (hidden_dim,)
    return shapes


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if np.shape(self.h) != np.shape(self.c):
            raise ShapeError(f"h and c differ in shape: {np.shape(self.h)} vs {np.shape(self.c)}")

    @classmethod
    def zeros(cls, hidden_dim: int, batch_shape: tuple = ()) -> "LstmState":
        shape = tuple(batch_shape) + (hidden_dim,)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class CellCache:
    params: LstmParams
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    g: np.ndarray
    f: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def lstm_cell_forward(params: LstmParams, x_t, prev: LstmState):
    """One LSTM step; returns ``(LstmState, CellCache)``.

    i, f, o are sigmoid gates, g the tanh input-update value,
    ``c = f*c_prev + i*g`` and ``h = tanh(c)*o``.
    """
    x = np.asarray(x_t, dtype=DTYPE)
    if x.shape[-1:] != (params.input_dim,):
        raise ShapeError(f"x_t has shape {x.shape}, expected last dim {params.input_dim}")
    if prev.h.shape[-1:] != (params.hidden_dim,):
        raise ShapeError(f"state has shape {prev.h.shape}, expected last dim {params.hidden_dim}")
    h_prev, c_prev = prev.h, prev.c

    def pre(g):
        return (x @ getattr(params, f"W_x{g}").T
                + h_prev @ getattr(params, f"U_h{g}").T
                + getattr(params, f"b_{g}"))

    i = sigmoid(pre("i"))
    g = np.tanh(pre("g"))
    f = sigmoid(pre("f"))
    o = sigmoid(pre("o"))
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = tanh_c * o
    cache = CellCache(params, x, h_prev, c_prev, i, g, f, o, c, tanh_c)
    return LstmState(h, c), cache


def _outer_sum(da: np.ndarray, x: np.ndarray) -> np.ndarray:
    # sum over batch axes of da (x) x
    return da.reshape(-1, da.shape[-1]).T @ x.reshape(-1, x.shape[-1])


def _batch_sum(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def lstm_cell_backward(cache: CellCache, dh, dc=None):
    """Backprop one LSTM step.

    ``dh`` and ``dc`` are the loss gradients w.r.t. the step's outputs
    ``h`` and ``c`` (``dc`` may be None). Returns ``(dparams, dx, dprev)``
    with ``dprev`` an ``LstmState`` holding the gradients for ``h_prev``
    and ``c_prev``.
    """
    p = cache.params
    dh = np.asarray(dh, dtype=DTYPE)
    if dh.shape != cache.c.shape:
        raise ShapeError(f"dh has shape {dh.shape}, cache expects {cache.c.shape}")
    if dc is None:
        dc = np.zeros_like(dh)
    elif np.shape(dc) != cache.c.shape:
        raise ShapeError(f"dc has shape {np.shape(dc)}, cache expects {cache.c.shape}")

    do = dh * cache.tanh_c
    dc_tot = dc + dh * cache.o * (1.0 - cache.tanh_c ** 2)
    da = {
        "i": dc_tot * cache.g * cache.i * (1.0 - cache.i),
        "g": dc_tot * cache.i * (1.0 - cache.g ** 2),
        "f": dc_tot * cache.c_prev * cache.f * (1.0 - cache.f),
        "o": do * cache.o * (1.0 - cache.o),
    }
    grads = {}
    dx = np.zeros_like(cache.x)
    dh_prev = np.zeros_like(cache.h_prev)
    for g in GATES:
        W = getattr(p, f"W_x{g}")
        U = getattr(p, f"U_h{g}")
        grads[f"W_x{g}"] = _outer_sum(da[g], cache.x)
        grads[f"U_h{g}"] = _outer_sum(da[g], cache.h_prev)
        grads[f"b_{g}"] = _batch_sum(da[g])
        dx += da[g] @ W
        dh_prev += da[g] @ U
    dc_prev = dc_tot * cache.f
    return LstmParams(**grads), dx, LstmState(dh_prev, dc_prev)


# ---------------------------------------------------------------------------
# Bidirectional LSTM
# ---------------------------------------------------------------------------

@dataclass
class BiLstmParams:
    """Two LSTM parameter sets plus an optional per-step output projection.

    Without ``W_fy``/``W_by``/``b_y`` the layer emits ``[h_fwd ; h_bwd]``
    ("concat" mode, used for stacked layers). With them it emits
    ``W_fy h_fwd + W_by h_bwd + b_y`` ("project" mode).
    """
    forward: LstmParams
    backward: LstmParams
    W_fy: Optional[np.ndarray] = None
    W_by: Optional[np.ndarray] = None
    b_y: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.forward.input_dim, self.forward.hidden_dim) != (
                self.backward.input_dim, self.backward.hidden_dim):
            raise ShapeError("forward and backward LSTMs must share (input_dim, hidden_dim)")
        proj = [self.W_fy is None, self.W_by is None, self.b_y is None]
        if any(proj) and not all(proj):
            raise ValueError("W_fy, W_by and b_y must be given together")
        if self.mode == "project":
            h = self.forward.hidden_dim
            out = self.b_y.shape[0]
            if self.W_fy.shape != (out, h) or self.W_by.shape != (out, h):
                raise ShapeError(f"projection weights must be {(out, h)}")

    @property
    def mode(self) -> str:
        return "concat" if self.W_fy is None else "project"

    @property
    def output_dim(self) -> int:
        if self.mode == "concat":
            return 2 * self.forward.hidden_dim
        return self.b_y.shape[0]


@dataclass
class SeqCache:
    params: BiLstmParams
    x_shape: tuple
    fwd: list = field(default_factory=list)
    bwd: list = field(default_factory=list)   # indexed by time step, not visit order
    h_fwd: Optional[np.ndarray] = None
    h_bwd: Optional[np.ndarray] = None


def bilstm_forward(params: BiLstmParams, x_seq):
    """Run both recurrences over ``x_seq`` of shape ``(..., T, input_dim)``.

    The forward LSTM visits t = 1..T, the backward LSTM t = T..1, each
    from a zero state. Returns ``(y_seq, SeqCache)`` with ``y_seq`` of
    shape ``(..., T, output_dim)``.
    """
    x = np.asarray(x_seq, dtype=DTYPE)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ValueError("bilstm_forward needs a non-empty sequence")
    if x.shape[-1] != params.forward.input_dim:
        raise ShapeError(f"x_seq has shape {x.shape}, expected last dim {params.forward.input_dim}")
    T = x.shape[-2]
    batch = x.shape[:-2]
    hid = params.forward.hidden_dim
    cache = SeqCache(params, x.shape, bwd=[None] * T)

    state = LstmState.zeros(hid, batch)
    hf = []
    for t in range(T):
        state, c = lstm_cell_forward(params.forward, x[..., t, :], state)
        cache.fwd.append(c)
        hf.append(state.h)

    state = LstmState.zeros(hid, batch)
    hb = [None] * T
    for t in reversed(range(T)):
        state, c = lstm_cell_forward(params.backward, x[..., t, :], state)
        cache.bwd[t] = c
        hb[t] = state.h

    h_fwd = np.stack(hf, axis=-2)
    h_bwd = np.stack(hb, axis=-2)
    cache.h_fwd, cache.h_bwd = h_fwd, h_bwd
    if params.mode == "concat":
        y = np.concatenate([h_fwd, h_bwd], axis=-1)
    else:
        y = h_fwd @ params.W_fy.T + h_bwd @ params.W_by.T + params.b_y
    return y, cache


def bilstm_backward(cache: SeqCache, grad_y_seq):
    """BPTT through both directions; returns ``(dparams, dx_seq)``."""
    p = cache.params
    dy = np.asarray(grad_y_seq, dtype=DTYPE)
    expected = cache.x_shape[:-1] + (p.output_dim,)
    if dy.shape != expected:
        raise ShapeError(f"grad_y_seq has shape {dy.shape}, expected {expected}")
    hid = p.forward.hidden_dim
    T = cache.x_shape[-2]

    dW_fy = dW_by = db_y = None
    if p.mode == "concat":
        dhf, dhb = dy[..., :hid], dy[..., hid:]
    else:
        dW_fy = _outer_sum(dy, cache.h_fwd)
        dW_by = _outer_sum(dy, cache.h_bwd)
        db_y = _batch_sum(dy)
        dhf = dy @ p.W_fy
        dhb = dy @ p.W_by

    dx = np.zeros(cache.x_shape)
    g_fwd = LstmParams.zeros(p.forward.input_dim, hid)
    g_bwd = LstmParams.zeros(p.backward.input_dim, hid)

    dh_next = np.zeros_like(dhf[..., 0, :])
    dc_next = np.zeros_like(dh_next)
    for t in reversed(range(T)):
        g, dx_t, dprev = lstm_cell_backward(cache.fwd[t], dhf[..., t, :] + dh_next, dc_next)
        g_fwd.add_(g)
        dx[..., t, :] += dx_t
        dh_next, dc_next = dprev.h, dprev.c

    dh_next = np.zeros_like(dh_next)
    dc_next = np.zeros_like(dh_next)
    for t in range(T):
        g, dx_t, dprev = lstm_cell_backward(cache.bwd[t], dhb[..., t, :] + dh_next, dc_next)
        g_bwd.add_(g)
        dx[..., t, :] += dx_t
        dh_next, dc_next = dprev.h, dprev.c

    return BiLstmParams(g_fwd, g_bwd, dW_fy, dW_by, db_y), dx


# ---------------------------------------------------------------------------
# 1D convolution
# ---------------------------------------------------------------------------

def _conv_pads(k: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        left = (k - 1) // 2
        return left, k - 1 - left
    raise ValueError(f"unknown padding {padding!r}")


def conv1d_output_length(L: int, k: int, padding: str = "valid") -> int:
    left, right = _conv_pads(k, padding)
    return L + left + right - k + 1


@dataclass
class ConvCache:
    kernels: np.ndarray
    windows: np.ndarray   # (..., L_out, Cin, k) view of the padded input
    x_shape: tuple
    pads: tuple


def conv1d_forward(kernels, bias, x, padding: str = "valid"):
    """Cross-correlate ``x`` of shape ``(..., L, Cin)`` with ``kernels`` ``(K, k, Cin)``.

    Unit stride. ``padding="valid"`` gives length ``L - k + 1``;
    ``"same"`` zero-pads to keep length ``L``. No activation is applied.
    """
    kernels = np.asarray(kernels, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    K, k, cin = kernels.shape
    if bias.shape != (K,):
        raise ShapeError(f"bias has shape {bias.shape}, expected {(K,)}")
    if x.ndim < 2 or x.shape[-1] != cin:
        raise ShapeError(f"x has shape {x.shape}, expected (..., L, {cin})")
    pads = _conv_pads(k, padding)
    if x.shape[-2] + sum(pads) < k:
        raise ShapeError(f"sequence length {x.shape[-2]} shorter than kernel size {k}")
    if any(pads):
        widths = [(0, 0)] * x.ndim
        widths[-2] = pads
        xp = np.pad(x, widths)
    else:
        xp = x
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=-2)
    out = np.tensordot(win, kernels.transpose(2, 1, 0), axes=([-2, -1], [0, 1])) + bias
    return out, ConvCache(kernels, win, x.shape, pads)


def conv1d_backward(cache: ConvCache, grad_out):
    """Returns ``(dkernels, dbias, dx)``."""
    g = np.asarray(grad_out, dtype=DTYPE)
    K, k, cin = cache.kernels.shape
    expected = cache.windows.shape[:-2] + (K,)
    if g.shape != expected:
        raise ShapeError(f"grad_out has shape {g.shape}, expected {expected}")
    lead = list(range(g.ndim - 1))
    # (K, Cin, k) -> (K, k, Cin)
    dk = np.tensordot(g, cache.windows, axes=(lead, lead)).transpose(0, 2, 1)
    db = _batch_sum(g)
    left, right = cache.pads
    L_out = g.shape[-2]
    padded = cache.x_shape[:-2] + (cache.x_shape[-2] + left + right, cin)
    dxp = np.zeros(padded)
    for s in range(k):
        dxp[..., s:s + L_out, :] += g @ cache.kernels[:, s, :]
    dx = dxp[..., left:left + cache.x_shape[-2], :]
    return dk, db, np.ascontiguousarray(dx)


# ---------------------------------------------------------------------------
# Average pooling
# ---------------------------------------------------------------------------

def avgpool1d_output_length(L: int, pool: int, stride: int) -> int:
    if L < pool:
        raise ShapeError(f"sequence length {L} shorter than pool size {pool}")
    return (L - pool) // stride + 1


def avgpool1d_forward(x, pool: int, stride: int):
    """Mean over length-``pool`` windows along axis -2; partial trailing windows are dropped."""
    x = np.asarray(x, dtype=DTYPE)
    if pool < 1 or stride < 1:
        raise ValueError("pool and stride must be positive")
    if x.ndim < 2:
        raise ShapeError(f"avgpool1d expects (..., L, C), got {x.shape}")
    L_out = avgpool1d_output_length(x.shape[-2], pool, stride)
    span = stride * (L_out - 1) + 1
    out = np.zeros(x.shape[:-2] + (L_out, x.shape[-1]))
    for s in range(pool):
        out += x[..., s:s + span:stride, :]
    return out / pool, (x.shape, pool, stride)


def avgpool1d_backward(cache, grad_out):
    x_shape, pool, stride = cache
    g = np.asarray(grad_out, dtype=DTYPE)
    L_out = g.shape[-2]
    span = stride * (L_out - 1) + 1
    dx = np.zeros(x_shape)
    for s in range(pool):
        dx[..., s:s + span:stride, :] += g / pool
    return dx


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    moving_mean: np.ndarray
    moving_var: np.ndarray
    momentum: float = 0.99
    epsilon: float = 1e-3

    def __post_init__(self):
        F = np.shape(self.gamma)
        for name in ("beta", "moving_mean", "moving_var"):
            if np.shape(getattr(self, name)) != F:
                raise ShapeError(f"{name} must have shape {F}")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def fresh(cls, features: int, momentum: float = 0.99, epsilon: float = 1e-3):
        return cls(np.ones(features), np.zeros(features), np.zeros(features),
                   np.ones(features), momentum, epsilon)


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    mode: str


def batchnorm_forward(state: BatchNormState, x, mode: str = "train"):
    """Normalize each feature (last axis) over all leading axes.

    Train mode uses batch statistics and updates the moving averages in
    place as ``moving = momentum*moving + (1-momentum)*batch``; infer mode
    uses the moving statistics only.
    """
    x = np.asarray(x, dtype=DTYPE)
    if not state.epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {state.epsilon}")
    if x.shape[-1:] != state.gamma.shape:
        raise ShapeError(f"x has shape {x.shape}, expected last dim {state.gamma.shape[0]}")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.ndim < 2 or x.shape[0] < 2:
            raise ValueError("batch normalization in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = state.momentum
        state.moving_mean[...] = m * state.moving_mean + (1.0 - m) * mean
        state.moving_var[...] = m * state.moving_var + (1.0 - m) * var
    elif mode == "infer":
        mean, var = state.moving_mean, state.moving_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mean) * inv_std
    y = state.gamma * xhat + state.beta
    return y, BatchNormCache(xhat, inv_std, state.gamma.copy(), mode)


def batchnorm_backward(cache: BatchNormCache, dy):
    """Returns ``(dgamma, dbeta, dx)``."""
    dy = np.asarray(dy, dtype=DTYPE)
    if dy.shape != cache.xhat.shape:
        raise ShapeError(f"dy has shape {dy.shape}, expected {cache.xhat.shape}")
    axes = tuple(range(dy.ndim - 1))
    dgamma = (dy * cache.xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * cache.gamma
    if cache.mode == "infer":
        return dgamma, dbeta, dxhat * cache.inv_std
    n = dy.size // dy.shape[-1]
    dx = (cache.inv_std / n) * (n * dxhat - dxhat.sum(axis=axes)
                                - cache.xhat * (dxhat * cache.xhat).sum(axis=axes))
    return dgamma, dbeta, dx


# ---------------------------------------------------------------------------
# Dense and flatten
# ---------------------------------------------------------------------------

def dense_param_count(n_in: int, n_out: int) -> int:
    return (n_in + 1) * n_out


def dense_forward(W, b, x, activation: Optional[str] = None):
    """Affine map ``y = W x + b`` on the last axis, optionally followed by ReLU."""
    W = np.asarray(W, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1:] != (W.shape[1],):
        raise ShapeError(f"dense shape mismatch: W {W.shape}, b {b.shape}, x {x.shape}")
    z = x @ W.T + b
    if activation is None:
        y = z
    elif activation == "relu":
        y = relu(z)
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return y, (W, x, z, activation)


def dense_backward(cache, dy):
    """Returns ``(dW, db, dx)``."""
    W, x, z, activation = cache
    dy = np.asarray(dy, dtype=DTYPE)
    if dy.shape != z.shape:
        raise ShapeError(f"dy has shape {dy.shape}, expected {z.shape}")
    dz = dy * (z > 0) if activation == "relu" else dy
    return _outer_sum(dz, x), _batch_sum(dz), dz @ W


def flatten(x, batch_dims: int = 0):
    """Row-major flatten of all but the first ``batch_dims`` axes; returns ``(flat, shape)``."""
    x = np.asarray(x, dtype=DTYPE)
    return x.reshape(x.shape[:batch_dims] + (-1,)), x.shape


def unflatten(grad, shape):
    return np.asarray(grad, dtype=DTYPE).reshape(shape)
