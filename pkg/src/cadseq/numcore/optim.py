"""Adam/AdamW, gradient clipping, and the warmup/step-decay learning-rate rule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    pass


@dataclass
class OptimState:
    """Per-parameter Adam moments plus hyperparameters.

    decoupled=True gives AdamW (weight decay applied directly to the
    parameters, not through the gradient); False gives plain Adam with no
    decay at all.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decoupled: bool = True
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure(self, params: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def optimizer_step(params: list[np.ndarray], grads: list[np.ndarray],
                   state: OptimState, lr: float | None = None) -> list[np.ndarray]:
    """One Adam(W) update, in place on the parameter arrays.

    `lr` overrides state.lr for this step (scheduling); moments use the
    standard bias correction.
    """
    state.ensure(params)
    if len(params) != len(grads):
        raise ShapeMismatchError("params/grads length mismatch")
    eta = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"param {p.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.decoupled and state.weight_decay > 0.0:
            p *= 1.0 - eta * state.weight_decay
        p -= eta * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def clip_gradients(grads: list[np.ndarray], max_norm: float = 1.0) -> list[np.ndarray]:
    """Scale the whole gradient set so its global L2 norm is <= max_norm.

    Returns new arrays when clipping occurs; never mutates the inputs.
    """
    total = 0.0
    for g in grads:
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = np.sqrt(total)
    if norm <= max_norm:
        return list(grads)
    scale = max_norm / norm
    return [g * scale for g in grads]


def lr_schedule(step: int, base_lr: float, warmup_steps: int,
                decay_at: int = 0, decay_factor: float = 1.0) -> float:
    """Linear warmup 0 -> base_lr, constant after, one multiplicative decay.

    The decay applies once step >= decay_at (decay_at <= 0 disables it).
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    lr = base_lr if warmup_steps <= 0 else base_lr * min(1.0, step / warmup_steps)
    if decay_at > 0 and step >= decay_at:
        lr *= decay_factor
    return lr
