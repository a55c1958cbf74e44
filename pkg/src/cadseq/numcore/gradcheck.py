"""Finite-difference verification of the tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor


def gradcheck(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor],
              eps: float = 1e-5, sample: int = 0) -> float:
    """Max relative error between tape and central-difference gradients.

    f must map the given parameter tensors to a scalar Tensor and be
    re-evaluable; parameters must be float64. Relative error per
    coordinate is |a-b| / max(1, |a|, |b|). sample > 0 checks at most that
    many evenly strided coordinates per tensor instead of all of them.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradcheck requires float64 parameters")
        p.grad = None

    out = f(params)
    if not np.isfinite(out.data):
        raise NonFiniteError("objective is not finite")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        if 0 < sample < flat.size:
            coords = np.unique(np.linspace(0, flat.size - 1, sample).astype(np.int64))
        else:
            coords = range(flat.size)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(params).data)
            flat[i] = orig - eps
            lo = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError("objective non-finite during perturbation")
            num = (hi - lo) / (2.0 * eps)
            err = abs(num - gflat[i]) / max(1.0, abs(num), abs(gflat[i]))
            worst = max(worst, err)
    return worst
