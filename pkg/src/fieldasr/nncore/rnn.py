"""LSTM cell and bidirectional LSTM layers on top of the tensor tape."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, concat, matmul, mul, reverse_sequences, sigmoid, tanh


@dataclass
class LstmParams:
    """One direction of one layer: input (D,4H), recurrent (H,4H), bias (4H,).

    Gate order along the 4H axis is input, forget, cell, output.
    """

    w: Tensor
    u: Tensor
    b: Tensor

    @property
    def hidden_size(self):
        return self.u.shape[0]


def init_lstm_params(input_size, hidden_size, rng, requires_grad=True):
    """Uniform(-0.1, 0.1) weights, zero biases, forget-gate bias +1."""
    w = rng.uniform(-0.1, 0.1, size=(input_size, 4 * hidden_size))
    u = rng.uniform(-0.1, 0.1, size=(hidden_size, 4 * hidden_size))
    b = np.zeros(4 * hidden_size)
    b[hidden_size : 2 * hidden_size] = 1.0
    return LstmParams(
        Tensor(w, requires_grad=requires_grad),
        Tensor(u, requires_grad=requires_grad),
        Tensor(b, requires_grad=requires_grad),
    )


def lstm_cell(x, h, c, params):
    """Single step: x (B,D), h and c (B,H) -> new (h, c)."""
    hidden = params.hidden_size
    if x.shape[-1] != params.w.shape[0]:
        raise ShapeError(
            f"lstm_cell: input dim {x.shape[-1]} does not match weights "
            f"{params.w.shape}"
        )
    z = matmul(x, params.w) + matmul(h, params.u) + params.b
    gi = sigmoid(z[:, 0:hidden])
    gf = sigmoid(z[:, hidden : 2 * hidden])
    gc = tanh(z[:, 2 * hidden : 3 * hidden])
    go = sigmoid(z[:, 3 * hidden : 4 * hidden])
    c_new = mul(gf, c) + mul(gi, gc)
    h_new = mul(go, tanh(c_new))
    return h_new, c_new


def _run_direction(x, params, batch):
    """Unroll forward-in-time over x (B,T,D); returns (B,T,H)."""
    hidden = params.hidden_size
    t_len = x.shape[1]
    h = Tensor(np.zeros((batch, hidden)))
    c = Tensor(np.zeros((batch, hidden)))
    outputs = []
    for t in range(t_len):
        h, c = lstm_cell(x[:, t, :], h, c, params)
        outputs.append(h)
    stacked = concat([o[:, None, :] for o in outputs], axis=1)
    return stacked


def bilstm_batch(x, lengths, fwd, bwd):
    """Bidirectional layer over a padded batch x (B,T,D) with row lengths.

    The backward direction runs on sequences reversed within their own
    length, so padded tails never leak into valid frames. Output is
    (B,T,2H); rows at positions >= length are garbage and must be masked
    or sliced away by the caller.
    """
    batch = x.shape[0]
    out_f = _run_direction(x, fwd, batch)
    x_rev = reverse_sequences(x, lengths)
    out_b = reverse_sequences(_run_direction(x_rev, bwd, batch), lengths)
    return concat([out_f, out_b], axis=2)


def bilstm_layer(sequence, fwd, bwd):
    """Bidirectional layer over one (T,D) sequence; returns (T,2H)."""
    if sequence.ndim != 2:
        raise ShapeError(f"bilstm_layer: expected (T,D) input, got {sequence.shape}")
    t_len = sequence.shape[0]
    batched = sequence[None, :, :]
    out = bilstm_batch(batched, np.array([t_len]), fwd, bwd)
    return out[0]
