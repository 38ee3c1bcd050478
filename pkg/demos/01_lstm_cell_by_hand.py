"""
One LSTM step, by hand and by the library
=========================================

Walks through a single gated cell update, then checks the backward pass
against finite differences.
"""

import math

import numpy as np

from bilstm_ids import layers as L
from bilstm_ids.gradcheck import numerical_gradient, relative_error
from bilstm_ids.numerics import make_rng

# With every weight and bias at zero, each sigmoid gate sits at 0.5 and the
# candidate value g = tanh(0) = 0. Starting from a cell state of 2, the new
# state is f * c_prev + i * g = 0.5 * 2 = 1 and h = tanh(1) * 0.5.
params = L.LstmParams.zeros(input_dim=1, hidden_dim=1)
state, cache = L.lstm_cell_forward(params, [0.3], L.LstmState(np.zeros(1), np.array([2.0])))
print("gates i, f, o:", cache.i, cache.f, cache.o)
print("c =", state.c[0], " h =", state.h[0], " tanh(1)/2 =", math.tanh(1.0) / 2)

# A random cell with a batch of three inputs.
rng = make_rng(0)
params = L.LstmParams(**{k: rng.normal(scale=0.5, size=s)
                         for k, s in L.lstm_param_shapes(4, 3).items()})
x = rng.normal(size=(3, 4))
prev = L.LstmState(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
state, cache = L.lstm_cell_forward(params, x, prev)

# Reduce the outputs to a scalar, then compare the analytic gradient of
# W_xf with central differences.
w = rng.normal(size=(3, 3))


def loss():
    return float(np.sum(w * L.lstm_cell_forward(params, x, prev)[0].h))


grads, dx, dprev = L.lstm_cell_backward(cache, w)
numeric = numerical_gradient(loss, params.W_xf)
print("W_xf relative error:", relative_error(grads.W_xf, numeric))

# A bidirectional layer runs one cell forward in time and a second one
# backward, then concatenates the two hidden states at each step.
bi = L.BiLstmParams(params, params.copy())
y, _ = L.bilstm_forward(bi, rng.normal(size=(2, 10, 4)))
print("BiLSTM output shape (batch, time, 2*hidden):", y.shape)
