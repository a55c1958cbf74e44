# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: selective-scan recurrence, nearest-neighbour
squared distances, and even-odd polygon tests.

Arithmetic order is kept identical to the pure-numpy fallback so that
both backends produce bit-identical results (see kernels/fallback.py).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, expf as c_expf

cnp.import_array()

ctypedef fused real:
    float
    double


def scan_fwd(real[:, :, ::1] x, real[:, :, :, ::1] abar,
             real[:, :, :, ::1] bbar, real[:, :, ::1] c):
    """Causal state recurrence h_t = abar_t*h_{t-1} + bbar_t*x_t, y_t = h_t @ c_t.

    Shapes: x (B,T,E), abar/bbar (B,T,E,N), c (B,T,N).
    Returns (y (B,T,E), h (B,T,E,N)); h is retained for the backward pass.
    """
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], E = x.shape[2], N = abar.shape[3]
    cdef Py_ssize_t b, t, e, n
    cdef real hcur, acc

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((B, T, E), dtype=dtype)
    h_arr = np.empty((B, T, E, N), dtype=dtype)
    cdef real[:, :, ::1] y = y_arr
    cdef real[:, :, :, ::1] h = h_arr
    cdef real xv

    # t-outer iteration keeps every slice access contiguous.
    for b in range(B):
        for t in range(T):
            for e in range(E):
                xv = x[b, t, e]
                acc = 0.0
                if t > 0:
                    for n in range(N):
                        hcur = abar[b, t, e, n] * h[b, t - 1, e, n] + bbar[b, t, e, n] * xv
                        h[b, t, e, n] = hcur
                        acc = acc + hcur * c[b, t, n]
                else:
                    for n in range(N):
                        hcur = bbar[b, t, e, n] * xv
                        h[b, t, e, n] = hcur
                        acc = acc + hcur * c[b, t, n]
                y[b, t, e] = acc
    return y_arr, h_arr


def scan_bwd(real[:, :, ::1] dy, real[:, :, :, ::1] h, real[:, :, ::1] x,
             real[:, :, :, ::1] abar, real[:, :, :, ::1] bbar, real[:, :, ::1] c):
    """Reverse-mode gradients of scan_fwd w.r.t. x, abar, bbar and c."""
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], E = x.shape[2], N = abar.shape[3]
    cdef Py_ssize_t b, t, e, n
    cdef real g, hp, accx

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.zeros((B, T, E), dtype=dtype)
    da_arr = np.zeros((B, T, E, N), dtype=dtype)
    db_arr = np.zeros((B, T, E, N), dtype=dtype)
    dc_arr = np.zeros((B, T, N), dtype=dtype)
    dh_arr = np.zeros((E, N), dtype=dtype)
    cdef real[:, :, ::1] dx = dx_arr
    cdef real[:, :, :, ::1] da = da_arr
    cdef real[:, :, :, ::1] db = db_arr
    cdef real[:, :, ::1] dc = dc_arr
    cdef real[:, ::1] dh = dh_arr

    for b in range(B):
        dh_arr[:] = 0.0
        for t in range(T - 1, -1, -1):
            for e in range(E):
                accx = 0.0
                for n in range(N):
                    g = dh[e, n] + dy[b, t, e] * c[b, t, n]
                    if t > 0:
                        hp = h[b, t - 1, e, n]
                    else:
                        hp = 0.0
                    da[b, t, e, n] = g * hp
                    db[b, t, e, n] = g * x[b, t, e]
                    accx = accx + g * bbar[b, t, e, n]
                    dc[b, t, n] = dc[b, t, n] + dy[b, t, e] * h[b, t, e, n]
                    dh[e, n] = g * abar[b, t, e, n]
                dx[b, t, e] = accx
    return dx_arr, da_arr, db_arr, dc_arr


def sel_scan_fwd(real[:, :, ::1] x, real[:, :, ::1] dt, real[:, ::1] a,
                 real[:, :, ::1] bsel, real[:, :, ::1] c):
    """Fused selective scan: discretization folded into the recurrence.

    h_t = exp(dt_t*a) * h_{t-1} + dt_t * bsel_t * x_t, y_t = h_t @ c_t.
    Shapes: x/dt (B,T,E), a (E,N), bsel/c (B,T,N). Avoids materializing
    the (B,T,E,N) discretized tensors; h is returned for the backward.
    """
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], E = x.shape[2], N = a.shape[1]
    cdef Py_ssize_t b, t, e, n
    cdef real xv, dtv, ab, hcur, acc

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    y_arr = np.empty((B, T, E), dtype=dtype)
    h_arr = np.empty((B, T, E, N), dtype=dtype)
    cdef real[:, :, ::1] y = y_arr
    cdef real[:, :, :, ::1] h = h_arr

    for b in range(B):
        for t in range(T):
            for e in range(E):
                xv = x[b, t, e]
                dtv = dt[b, t, e]
                acc = 0.0
                for n in range(N):
                    if real is float:
                        ab = c_expf(dtv * a[e, n])
                    else:
                        ab = c_exp(dtv * a[e, n])
                    if t > 0:
                        hcur = ab * h[b, t - 1, e, n] + dtv * bsel[b, t, n] * xv
                    else:
                        hcur = dtv * bsel[b, t, n] * xv
                    h[b, t, e, n] = hcur
                    acc = acc + hcur * c[b, t, n]
                y[b, t, e] = acc
    return y_arr, h_arr


def sel_scan_bwd(real[:, :, ::1] dy, real[:, :, :, ::1] h, real[:, :, ::1] x,
                 real[:, :, ::1] dt, real[:, ::1] a, real[:, :, ::1] bsel,
                 real[:, :, ::1] c):
    """Gradients of sel_scan_fwd w.r.t. x, dt, a, bsel and c."""
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], E = x.shape[2], N = a.shape[1]
    cdef Py_ssize_t b, t, e, n
    cdef real g, hp, ab, xv, dtv, accx, accdt, dyv

    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    dx_arr = np.zeros((B, T, E), dtype=dtype)
    ddt_arr = np.zeros((B, T, E), dtype=dtype)
    da_arr = np.zeros((E, N), dtype=dtype)
    dbsel_arr = np.zeros((B, T, N), dtype=dtype)
    dc_arr = np.zeros((B, T, N), dtype=dtype)
    dh_arr = np.zeros((E, N), dtype=dtype)
    cdef real[:, :, ::1] dx = dx_arr
    cdef real[:, :, ::1] ddt = ddt_arr
    cdef real[:, ::1] da = da_arr
    cdef real[:, :, ::1] dbsel = dbsel_arr
    cdef real[:, :, ::1] dc = dc_arr
    cdef real[:, ::1] dh = dh_arr

    for b in range(B):
        dh_arr[:] = 0.0
        for t in range(T - 1, -1, -1):
            for e in range(E):
                xv = x[b, t, e]
                dtv = dt[b, t, e]
                dyv = dy[b, t, e]
                accx = 0.0
                accdt = 0.0
                for n in range(N):
                    g = dh[e, n] + dyv * c[b, t, n]
                    dc[b, t, n] = dc[b, t, n] + dyv * h[b, t, e, n]
                    if t > 0:
                        hp = h[b, t - 1, e, n]
                    else:
                        hp = 0.0
                    if real is float:
                        ab = c_expf(dtv * a[e, n])
                    else:
                        ab = c_exp(dtv * a[e, n])
                    accdt = accdt + g * (ab * a[e, n] * hp + bsel[b, t, n] * xv)
                    da[e, n] = da[e, n] + g * ab * dtv * hp
                    dbsel[b, t, n] = dbsel[b, t, n] + g * dtv * xv
                    accx = accx + g * dtv * bsel[b, t, n]
                    dh[e, n] = g * ab
                dx[b, t, e] = accx
                ddt[b, t, e] = accdt
    return dx_arr, ddt_arr, da_arr, dbsel_arr, dc_arr


def nn_sqdist(double[:, ::1] a, double[:, ::1] b):
    """Min squared euclidean distance from each row of a (n,3) to rows of b (m,3)."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0]
    cdef Py_ssize_t i, j
    cdef double dx, dy, dz, d, best

    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        best = -1.0
        for j in range(m):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            dz = a[i, 2] - b[j, 2]
            d = (dx * dx + dy * dy) + dz * dz
            if best < 0.0 or d < best:
                best = d
        out[i] = best
    return out_arr


def points_in_loops(double[::1] px, double[::1] py,
                    double[::1] vx, double[::1] vy, long[::1] starts):
    """Even-odd (ray casting) test of P points against a set of closed loops.

    Loop k occupies vertex indices starts[k]..starts[k+1]-1 (closed: last
    vertex equals the first). A point is inside when it crosses an odd
    number of edges, counted across all loops, which makes inner loops
    behave as holes.
    """
    cdef Py_ssize_t P = px.shape[0], L = starts.shape[0] - 1
    cdef Py_ssize_t p, k, i, lo, hi
    cdef double x, y, x1, y1, x2, y2
    cdef unsigned char inside

    out_arr = np.zeros(P, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    for p in range(P):
        x = px[p]
        y = py[p]
        inside = 0
        for k in range(L):
            lo = starts[k]
            hi = starts[k + 1]
            for i in range(lo, hi - 1):
                x1 = vx[i]
                y1 = vy[i]
                x2 = vx[i + 1]
                y2 = vy[i + 1]
                if (y1 > y) != (y2 > y):
                    if x < (x2 - x1) * (y - y1) / (y2 - y1) + x1:
                        inside = not inside
        out[p] = inside
    return out_arr
