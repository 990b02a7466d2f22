"""Minimal dense-tensor numeric core: reverse-mode autodiff, LSTM, Adadelta."""

from . import tensor as _tensor_mod
from .optim import AdadeltaState, adadelta_step, clip_global_norm
from .rnn import LstmParams, bilstm_batch, bilstm_layer, init_lstm_params, lstm_cell
from .tensor import (
    Tensor,
    add,
    concat,
    cross_entropy,
    custom,
    dot,
    embedding_lookup,
    log_softmax,
    matmul,
    mul,
    no_grad,
    reshape,
    reverse_sequences,
    sigmoid,
    softmax,
    sub,
    take,
    tanh,
    tsum,
)


def set_debug_checks(enabled):
    """Toggle per-op finiteness assertions (slow; for tests)."""
    _tensor_mod.debug_checks = bool(enabled)
