"""Pure-numpy reference implementations of the compiled kernels.

These are the import-time fallback when the Cython extension is absent
and the ground truth the extension is tested against. Elementwise
arithmetic is written with the same association order as the compiled
code so results agree bit-for-bit.
"""

import numpy as np


def scan_fwd(x, abar, bbar, c):
    """Causal recurrence over (B,T,E,N) inputs; see kernels/_ext.pyx."""
    B, T, E = x.shape
    N = abar.shape[3]
    h = np.empty((B, T, E, N), dtype=x.dtype)
    y = np.empty((B, T, E), dtype=x.dtype)
    state = np.zeros((B, E, N), dtype=x.dtype)
    for t in range(T):
        state = abar[:, t] * state + bbar[:, t] * x[:, t, :, None]
        h[:, t] = state
        y[:, t] = np.einsum("ben,bn->be", state, c[:, t])
    return y, h


def scan_bwd(dy, h, x, abar, bbar, c):
    """Reverse-mode gradients of scan_fwd."""
    B, T, E = x.shape
    N = abar.shape[3]
    dx = np.empty((B, T, E), dtype=x.dtype)
    da = np.empty((B, T, E, N), dtype=x.dtype)
    db = np.empty((B, T, E, N), dtype=x.dtype)
    dc = np.empty((B, T, N), dtype=x.dtype)
    dh = np.zeros((B, E, N), dtype=x.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh + dy[:, t, :, None] * c[:, t, None, :]
        hprev = h[:, t - 1] if t > 0 else np.zeros_like(dh)
        da[:, t] = dh * hprev
        db[:, t] = dh * x[:, t, :, None]
        dx[:, t] = np.einsum("ben,ben->be", dh, bbar[:, t])
        # c_t only feeds y_t directly, so its gradient bypasses the state.
        dc[:, t] = np.einsum("be,ben->bn", dy[:, t], h[:, t])
        dh = dh * abar[:, t]
    return dx, da, db, dc


def sel_scan_fwd(x, dt, a, bsel, c):
    """Fused selective scan (discretization inside); see _ext.pyx."""
    abar = np.exp(dt[..., None] * a)
    bbar = dt[..., None] * bsel[:, :, None, :]
    return scan_fwd(x, abar, bbar, c)


def sel_scan_bwd(dy, h, x, dt, a, bsel, c):
    """Gradients of sel_scan_fwd via the chain rule through (abar, bbar)."""
    abar = np.exp(dt[..., None] * a)
    bbar = dt[..., None] * bsel[:, :, None, :]
    dx, dabar, dbbar, dc = scan_bwd(dy, h, x, abar, bbar, c)
    ddt = np.einsum("bten,bten->bte", dabar, abar * a) \
        + np.einsum("bten,btn->bte", dbbar, bsel)
    da = np.einsum("bten,bte->en", dabar * abar, dt)
    dbsel = np.einsum("bten,bte->btn", dbbar, dt)
    return dx, ddt, da, dbsel, dc


def nn_sqdist(a, b, block=256):
    """Min squared distance from each row of a (n,3) to rows of b (m,3).

    Blocked to bound memory; the per-pair formula (dx*dx + dy*dy) + dz*dz
    matches the compiled kernel exactly.
    """
    n = a.shape[0]
    out = np.empty(n, dtype=np.float64)
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        diff = a[lo:hi, None, :] - b[None, :, :]
        d = (diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]) + diff[..., 2] * diff[..., 2]
        out[lo:hi] = d.min(axis=1)
    return out


def points_in_loops(px, py, vx, vy, starts):
    """Even-odd test of points against closed loops; see kernels/_ext.pyx."""
    inside = np.zeros(px.shape[0], dtype=np.uint8)
    for k in range(len(starts) - 1):
        lo, hi = starts[k], starts[k + 1]
        x1, y1 = vx[lo:hi - 1], vy[lo:hi - 1]
        x2, y2 = vx[lo + 1:hi], vy[lo + 1:hi]
        straddle = (y1[None, :] > py[:, None]) != (y2[None, :] > py[:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = (x2 - x1)[None, :] * (py[:, None] - y1[None, :]) / (y2 - y1)[None, :] + x1[None, :]
        crossings = (straddle & (px[:, None] < xcross)).sum(axis=1)
        inside ^= (crossings & 1).astype(np.uint8)
    return inside
