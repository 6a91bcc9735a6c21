"""Zero-order-hold discretization for diagonal state matrices."""

from __future__ import annotations

import numpy as np

SINGULAR_EPS = 1e-12


def zoh_discretize(A, B, delta):
    """Discretize a diagonal continuous system over a step ``delta``.

    Returns ``(A_bar, B_bar)`` with ``A_bar = exp(delta*A)`` and
    ``B_bar = (exp(delta*A) - 1) / A * B`` elementwise. Entries with
    ``|A| < 1e-12`` use the limit ``B_bar = delta*B``.

    Args:
        A: Diagonal entries, shape (N,) or broadcastable.
        B: Input projection, broadcastable against ``A``.
        delta: Positive step size (scalar or broadcastable array).
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(delta <= 0):
        raise ValueError("zoh_discretize: delta must be strictly positive")
    dA = delta * A
    A_bar = np.exp(dA)
    small = np.abs(A) < SINGULAR_EPS
    safe_A = np.where(small, 1.0, A)
    B_bar = np.where(small, delta * B, np.expm1(dA) / safe_A * B)
    return A_bar, B_bar


def scan_recurrence(A_bar, B_bar, x, C):
    """Run ``h_t = A_bar_t*h_{t-1} + B_bar_t*x_t; y_t = <C_t, h_t>`` from ``h_0 = 0``.

    Works on already-discretized per-token parameters, so it also accepts
    values outside the stable range (e.g. ``A_bar = 1``).

    Args:
        A_bar, B_bar: (L, D, N) arrays (broadcastable).
        x: (L, D) inputs.
        C: (L, N) readout vectors (broadcastable).

    Returns:
        (y, h) with y of shape (L, D) and h the stacked states (L, D, N).
    """
    x = np.asarray(x, dtype=np.float64)
    L, D = x.shape
    A_bar = np.broadcast_to(np.asarray(A_bar, dtype=np.float64), (L, D) + np.shape(A_bar)[-1:])
    N = A_bar.shape[-1]
    B_bar = np.broadcast_to(np.asarray(B_bar, dtype=np.float64), (L, D, N))
    C = np.broadcast_to(np.asarray(C, dtype=np.float64), (L, N))
    h = np.zeros((D, N))
    hs = np.zeros((L, D, N))
    y = np.zeros((L, D))
    for t in range(L):
        h = A_bar[t] * h + B_bar[t] * x[t][:, None]
        hs[t] = h
        y[t] = h @ C[t]
    return y, hs
