"""Numeric substrate: tensors with reverse-mode autodiff, optimizers,
verification oracles, and checkpoint IO."""

from .checkpoint import CorruptCheckpointError, load_arrays, save_arrays
from .gradcheck import gradcheck
from .ops import FullyMaskedRowError, layer_norm_modulated, masked_attention
from .optim import OptimState, ShapeMismatchError, clip_gradients, lr_schedule, optimizer_step
from .tensor import (
    NonFiniteError,
    Tensor,
    add,
    no_grad,
    concat,
    conv1d_causal,
    cross_entropy_sum,
    dropout,
    fused_ssm_scan,
    gather,
    layer_norm,
    matmul,
    mse,
    mul,
    narrow,
    reshape,
    sigmoid,
    silu,
    softmax,
    softplus,
    ssm_scan,
    texp,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "CorruptCheckpointError", "FullyMaskedRowError", "NonFiniteError", "OptimState",
    "ShapeMismatchError", "Tensor", "add", "clip_gradients", "concat", "conv1d_causal",
    "cross_entropy_sum", "dropout", "fused_ssm_scan", "gather", "gradcheck", "layer_norm",
    "layer_norm_modulated", "load_arrays", "lr_schedule", "masked_attention", "matmul",
    "mse", "mul", "narrow", "no_grad", "optimizer_step", "reshape", "save_arrays",
    "sigmoid", "silu", "softmax", "softplus", "ssm_scan", "texp", "tmean",
    "transpose", "tsum",
]
