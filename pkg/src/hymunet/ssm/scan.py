"""Selective scan as a differentiable op, backed by the compiled kernel when available.

Set ``HYMUNET_PURE_PYTHON=1`` to force the numpy kernels.
"""

from __future__ import annotations

import os

import numpy as np

from ..autodiff.tensor import Tensor, as_tensor, make_result, shape_error, unbroadcast
from . import _scan_py

_ext = None
if not os.environ.get("HYMUNET_PURE_PYTHON"):
    try:
        from . import _scan_ext as _ext
    except ImportError:  # extension not built
        _ext = None

BACKENDS = {"python": _scan_py}
if _ext is not None:
    BACKENDS["compiled"] = _ext
DEFAULT_BACKEND = "compiled" if _ext is not None else "python"


def get_kernels(backend: str | None = None):
    name = backend or DEFAULT_BACKEND
    if name not in BACKENDS:
        raise ValueError(f"scan backend {name!r} unavailable; have {sorted(BACKENDS)}")
    return BACKENDS[name]


def _c(a: np.ndarray, shape: tuple) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(a, shape), dtype=np.float64)


def selective_scan(u, delta, A, B, C, backend: str | None = None) -> Tensor:
    """Differentiable selective scan with per-token step sizes and projections.

    Shapes (leading direction axis K optional):
        u, delta: (K, Bsz, L, D) or (Bsz, L, D)
        A: (K, D, N) or (D, N)
        B, C: broadcastable to (K, Bsz, L, N)

    Returns y with the shape of ``u``.
    """
    u, delta, A, B, C = (as_tensor(t) for t in (u, delta, A, B, C))
    squeeze = u.ndim == 3
    if u.ndim not in (3, 4) or delta.shape != u.shape:
        raise shape_error("selective_scan", u.shape, delta.shape)
    lead = (1,) if squeeze else u.shape[:1]
    full_u = lead + u.shape[-3:]
    K, Bsz, L, D = full_u
    if A.shape[-2] != D or A.ndim not in (2, 3):
        raise shape_error("selective_scan", u.shape, A.shape)
    N = A.shape[-1]
    full_bc = (K, Bsz, L, N)
    try:
        np.broadcast_shapes(B.shape, full_bc if not squeeze else full_bc[1:])
        np.broadcast_shapes(C.shape, full_bc if not squeeze else full_bc[1:])
    except ValueError:
        raise shape_error("selective_scan", u.shape, B.shape, C.shape) from None
    if not np.all(np.isfinite(u.data)):
        raise FloatingPointError("selective_scan: non-finite input")

    def expand(t, shape):
        d = t.data
        if squeeze:
            d = d[None]
        return _c(d, shape)

    ud = expand(u, full_u)
    dd = expand(delta, full_u)
    Ad = _c(A.data if A.ndim == 3 else A.data[None], (K, D, N))
    Bd = _c(B.data[None] if squeeze else B.data, full_bc)
    Cd = _c(C.data[None] if squeeze else C.data, full_bc)
    kern = get_kernels(backend)
    y, hs = kern.scan_forward(ud, dd, Ad, Bd, Cd)
    y = np.asarray(y)
    out = y[0] if squeeze else y

    def bwd(g):
        gd = _c(g[None] if squeeze else g, full_u)
        du, ddelta, dA, dB, dC = (np.asarray(a) for a in kern.scan_backward(ud, dd, Ad, Bd, Cd, hs, gd))
        if squeeze:
            du, ddelta, dB, dC = du[0], ddelta[0], dB[0], dC[0]
            dA = dA[0] if A.ndim == 2 else dA
        return (du, ddelta, unbroadcast(dA, A.shape), unbroadcast(dB, B.shape), unbroadcast(dC, C.shape))

    return make_result("selective_scan", out, (u, delta, A, B, C), bwd)
