"""Hot-kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set CADSEQ_PURE_PY=1 to force the fallback (used by the benchmark and the
backend-agreement tests).
"""

import os

import numpy as np

from . import fallback

if os.environ.get("CADSEQ_PURE_PY"):
    _impl = fallback
    BACKEND = "fallback"
else:
    try:
        from . import _ext as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = fallback
        BACKEND = "fallback"


def _c(a, dtype=None):
    return np.ascontiguousarray(a, dtype=dtype)


def scan_fwd(x, abar, bbar, c):
    return _impl.scan_fwd(_c(x), _c(abar), _c(bbar), _c(c))


def scan_bwd(dy, h, x, abar, bbar, c):
    return _impl.scan_bwd(_c(dy), _c(h), _c(x), _c(abar), _c(bbar), _c(c))


def sel_scan_fwd(x, dt, a, bsel, c):
    return _impl.sel_scan_fwd(_c(x), _c(dt), _c(a), _c(bsel), _c(c))


def sel_scan_bwd(dy, h, x, dt, a, bsel, c):
    return _impl.sel_scan_bwd(_c(dy), _c(h), _c(x), _c(dt), _c(a), _c(bsel), _c(c))


def nn_sqdist(a, b):
    return _impl.nn_sqdist(_c(a, np.float64), _c(b, np.float64))


def points_in_loops(px, py, vx, vy, starts):
    return _impl.points_in_loops(
        _c(px, np.float64), _c(py, np.float64),
        _c(vx, np.float64), _c(vy, np.float64), _c(starts, np.int64),
    )
