"""Shared building blocks for the learned stages: parameter store, linear
layers, affine layer norm, multi-head self-attention, feed-forward, and the
sinusoidal table used for positions and diffusion timesteps."""

from __future__ import annotations

import math

import numpy as np

from .numcore import Tensor, add, gather, layer_norm, masked_attention, matmul, mul, reshape, silu, transpose


class Params:
    """Named trainable tensors with checkpoint-friendly access."""

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self._store: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(np.ascontiguousarray(array, dtype=self.dtype), requires_grad=True)
        self._store[name] = t
        return t

    def linear(self, name: str, din: int, dout: int, bias: bool = True,
               scale: float | None = None, zero: bool = False):
        std = scale if scale is not None else 1.0 / math.sqrt(din)
        w = np.zeros((din, dout)) if zero else self.rng.normal(0.0, std, (din, dout))
        tw = self.add(name + ".w", w)
        tb = self.add(name + ".b", np.zeros(dout)) if bias else None
        return tw, tb

    def __getitem__(self, name: str) -> Tensor:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def names(self) -> list[str]:
        return sorted(self._store)

    def tensors(self) -> list[Tensor]:
        return [self._store[n] for n in self.names()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: self._store[n].data for n in self.names()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self._store.items():
            if n not in arrays:
                raise KeyError(f"checkpoint missing parameter {n}")
            if tuple(arrays[n].shape) != t.data.shape:
                raise ValueError(f"shape mismatch for {n}: "
                                 f"{arrays[n].shape} vs {t.data.shape}")
            t.data = np.ascontiguousarray(arrays[n], dtype=self.dtype)

    def zero_grad(self) -> None:
        for t in self._store.values():
            t.grad = None


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def affine_layer_norm(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return add(mul(layer_norm(x), g), b)


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    return linear(silu(linear(x, w1, b1)), w2, b2)


def self_attention(x: Tensor, mask: np.ndarray, n_heads: int, wq, bq, wk, bk,
                   wv, bv, wo, bo) -> Tensor:
    """Multi-head self-attention over (B, T, D) with an additive (T, T) mask."""
    B, T, D = x.shape
    dh = D // n_heads

    def split(t: Tensor) -> Tensor:
        return transpose(reshape(t, (B, T, n_heads, dh)), (0, 2, 1, 3))

    q = split(linear(x, wq, bq))
    k = split(linear(x, wk, bk))
    v = split(linear(x, wv, bv))
    out = masked_attention(q, k, v, mask)
    out = reshape(transpose(out, (0, 2, 1, 3)), (B, T, D))
    return linear(out, wo, bo)


def sinusoidal_table(n_pos: int, dim: int, dtype=np.float64) -> np.ndarray:
    """Rows of sin/cos positional codes: even dims sin, odd dims cos."""
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    i2 = np.arange(0, dim, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / dim)
    table = np.zeros((n_pos, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype)
