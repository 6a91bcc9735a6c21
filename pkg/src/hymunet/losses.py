"""Hybrid segmentation loss: soft Dice, BCE and a boundary-band BCE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff.tensor import Tensor, as_tensor, clamp, log, tsum

BCE_CLAMP = 1e-7


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 0.5
    epsilon: float = 1e-6
    edge_radius: int = 2
    edge_weight: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.edge_radius < 1:
            raise ValueError("edge_radius must be at least 1")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0 or self.edge_weight <= 0:
            raise ValueError("loss weights must be nonnegative and edge_weight positive")


def _check(y_hat: Tensor, y) -> np.ndarray:
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ValueError(f"prediction shape {y_hat.shape} does not match mask shape {y.shape}")
    return y


def dice_loss(y_hat, y, epsilon: float = 1e-6) -> Tensor:
    """``1 - (2*sum(p*y) + eps) / (sum(p^2) + sum(y^2) + eps)`` over all pixels."""
    y_hat = as_tensor(y_hat)
    y = _check(y_hat, y)
    inter = tsum(y_hat * y)
    denom = tsum(y_hat * y_hat) + float((y * y).sum())
    return 1.0 - (2.0 * inter + epsilon) / (denom + epsilon)


def _bce_map(y_hat: Tensor, y: np.ndarray) -> Tensor:
    p = clamp(y_hat, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return -(log(p) * y + log(1.0 - p) * (1.0 - y))


def bce_loss(y_hat, y) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    y_hat = as_tensor(y_hat)
    y = _check(y_hat, y)
    return _bce_map(y_hat, y).mean()


def _window_reduce(mask: np.ndarray, radius: int, fill: bool, op) -> np.ndarray:
    k = 2 * radius + 1
    pad = [(0, 0)] * (mask.ndim - 2) + [(radius, radius), (radius, radius)]
    padded = np.pad(mask, pad, constant_values=fill)
    win = sliding_window_view(padded, (k, k), axis=(-2, -1))
    return op(win, axis=(-2, -1))


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    return _window_reduce(np.asarray(mask, dtype=bool), radius, False, np.any)


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square erosion; pixels outside the image count as background."""
    return _window_reduce(np.asarray(mask, dtype=bool), radius, False, np.all)


def edge_band(y, radius: int) -> np.ndarray:
    """Boundary band ``dilate(y, r) & ~erode(y, r)`` over the last two axes."""
    y = np.asarray(y) > 0.5
    return dilate(y, radius) & ~erode(y, radius)


def edge_loss(y_hat, y, radius: int = 2, edge_weight: float = 1.0) -> Tensor:
    """BCE averaged over the boundary band of ``y``, times ``edge_weight``; 0 for an empty band."""
    y_hat = as_tensor(y_hat)
    y = _check(y_hat, y)
    band = edge_band(y, radius)
    count = int(band.sum())
    if count == 0:
        return tsum(y_hat * 0.0)
    return tsum(_bce_map(y_hat, y) * band) * (edge_weight / count)


def total_loss(y_hat, y, w: LossWeights | None = None, parts: dict | None = None) -> Tensor:
    """``lambda1*Dice + lambda2*BCE + lambda3*Edge``; component values land in ``parts``."""
    w = w or LossWeights()
    y_hat = as_tensor(y_hat)
    ld = dice_loss(y_hat, y, w.epsilon)
    lb = bce_loss(y_hat, y)
    le = edge_loss(y_hat, y, w.edge_radius, w.edge_weight)
    if parts is not None:
        parts.update(dice=ld.item(), bce=lb.item(), edge=le.item())
    return ld * w.lambda1 + lb * w.lambda2 + le * w.lambda3


def batch_loss(y_hat, y, w: LossWeights | None = None, parts: dict | None = None) -> Tensor:
    """Mean of ``total_loss`` over the leading batch axis (one loss per sample)."""
    y_hat = as_tensor(y_hat)
    y = _check(y_hat, y)
    n = y_hat.shape[0]
    total = None
    acc = {"dice": 0.0, "bce": 0.0, "edge": 0.0}
    for i in range(n):
        p = {}
        li = total_loss(y_hat[i], y[i], w, p)
        for k in acc:
            acc[k] += p[k] / n
        total = li if total is None else total + li
    if parts is not None:
        parts.update(acc)
    return total * (1.0 / n)
