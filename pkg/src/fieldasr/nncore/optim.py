"""Adadelta optimizer with optional global gradient-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError


@dataclass
class AdadeltaState:
    """Decaying accumulators of squared gradients and squared updates.

    There is no global learning rate; step sizes adapt from the ratio of the
    two accumulators.
    """

    rho: float = 0.95
    epsilon: float = 1e-8
    accum_grad_sq: dict = field(default_factory=dict)
    accum_update_sq: dict = field(default_factory=dict)

    def accumulators_for(self, name, shape):
        if name not in self.accum_grad_sq:
            self.accum_grad_sq[name] = np.zeros(shape)
            self.accum_update_sq[name] = np.zeros(shape)
        return self.accum_grad_sq[name], self.accum_update_sq[name]


def clip_global_norm(grads, max_norm):
    """Scale the whole gradient dict so its global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def adadelta_step(params, grads, state, clip_norm=None):
    """One in-place update: params and grads are dicts keyed by name.

    E[g^2] <- rho E[g^2] + (1-rho) g^2
    dx     = -sqrt((E[dx^2]+eps) / (E[g^2]+eps)) * g
    E[dx^2]<- rho E[dx^2] + (1-rho) dx^2
    x      <- x + dx
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")

    if clip_norm is not None:
        grads, _ = clip_global_norm(grads, clip_norm)

    rho, eps = state.rho, state.epsilon
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != param.data.shape:
            raise ShapeError(
                f"adadelta_step: gradient {g.shape} vs parameter "
                f"{param.data.shape} for '{name}'"
            )
        eg, ed = state.accumulators_for(name, param.data.shape)
        eg *= rho
        eg += (1.0 - rho) * g * g
        dx = -np.sqrt((ed + eps) / (eg + eps)) * g
        ed *= rho
        ed += (1.0 - rho) * dx * dx
        param.data += dx
