"""Attention and normalization composites shared by both learned stages."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, layer_norm, matmul, mul, softmax, transpose


class FullyMaskedRowError(ValueError):
    """An additive attention mask forbids every key for some query row."""


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
    """softmax(q kᵀ / sqrt(d) + mask) v with an additive {0, -inf} mask.

    q, k, v: (..., T, d); mask: (T, T), broadcast over leading dims.
    Masked positions receive exactly zero weight.
    """
    if not np.isfinite(mask).any(axis=-1).all():
        raise FullyMaskedRowError("attention mask forbids all keys for some row")
    d = q.shape[-1]
    scores = mul(matmul(q, transpose(k, (*range(k.data.ndim - 2), k.data.ndim - 1, k.data.ndim - 2))),
                 1.0 / np.sqrt(d))
    scores = add(scores, Tensor(mask.astype(scores.data.dtype)))
    return matmul(softmax(scores), v)


def layer_norm_modulated(x: Tensor, xi: Tensor, psi: Tensor, eps: float = 1e-5) -> Tensor:
    """LayerNorm(x) * (1 + xi) + psi, modulation broadcast over positions."""
    return add(mul(layer_norm(x, eps), add(xi, 1.0)), psi)
