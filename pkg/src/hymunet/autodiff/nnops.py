"""Convolution, normalization and resampling ops on (batch, channel, H, W) tensors."""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, Tensor, as_tensor, make_result, shape_error


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    Shape rule: x (B, C, H, W), weight (O, C, kh, kw), bias (O,) ->
    (B, O, (H + 2p - kh) // s + 1, (W + 2p - kw) // s + 1).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        inputs.append(bias)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise shape_error("conv2d", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise shape_error("conv2d", weight.shape, bias.shape)
    B, C, H, W = x.shape
    O, _, kh, kw = weight.shape
    s, p = int(stride), int(padding)
    Ho, Wo = (H + 2 * p - kh) // s + 1, (W + 2 * p - kw) // s + 1
    if Ho < 1 or Wo < 1:
        raise shape_error("conv2d", x.shape, weight.shape)

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data.copy()
    wd = weight.data
    if kh == 1 and kw == 1:
        win = xp[:, :, ::s, ::s][:, :, :Ho, :Wo]
        out = np.einsum("bchw,oc->bohw", win, wd[:, :, 0, 0], optimize=True)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :Ho, :Wo]
        out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bwd(g):
        gx = gw = gb = None
        if kh == 1 and kw == 1:
            if weight.requires_grad:
                gw = np.einsum("bohw,bchw->oc", g, win, optimize=True)[:, :, None, None]
            if x.requires_grad:
                gwin = np.einsum("bohw,oc->bchw", g, wd[:, :, 0, 0], optimize=True)
                gxp = np.zeros_like(xp)
                gxp[:, :, : s * Ho : s, : s * Wo : s] = gwin
        else:
            if weight.requires_grad:
                gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            if x.requires_grad:
                gwin = np.tensordot(g, wd, axes=([1], [0]))  # (B, Ho, Wo, C, kh, kw)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += gwin[..., i, j].transpose(0, 3, 1, 2)
        if x.requires_grad:
            gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) + ((gb,) if bias is not None else ())

    return make_result("conv2d", out, inputs, bwd)


def batch_norm(x, gamma, beta, running_mean: Optional[np.ndarray], running_var: Optional[np.ndarray],
               training: bool, momentum: float = 0.1, eps: float = 1e-5, per_instance: bool = False) -> Tensor:
    """Batch normalization over (B, H, W) per channel.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, PyTorch convention). With
    ``per_instance`` statistics are taken over (H, W) per sample and the
    running buffers are ignored.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise shape_error("batch_norm", x.shape, gamma.shape)
    xd = x.data
    gd = gamma.data[None, :, None, None]
    bd = beta.data[None, :, None, None]

    if training or per_instance:
        axes = (2, 3) if per_instance else (0, 2, 3)
        n = int(np.prod([xd.shape[a] for a in axes]))
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        if training and not per_instance and running_mean is not None:
            unbiased = var.reshape(-1) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
        out = gd * xhat + bd

        def bwd(g):
            gg = (g * xhat).sum(axis=(0, 2, 3))
            gbeta = g.sum(axis=(0, 2, 3))
            gxhat = g * gd
            gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
            return gx, gg, gbeta
    else:
        inv = 1.0 / np.sqrt(running_var[None, :, None, None] + eps)
        xhat = (xd - running_mean[None, :, None, None]) * inv
        out = gd * xhat + bd

        def bwd(g):
            return g * gd * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result("batch_norm", out, (x, gamma, beta), bwd)


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights (n_out, n_in), half-pixel centres, edge clamped.

    Matches bilinear resampling with ``align_corners=False``.
    """
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes (align_corners=False)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise shape_error("resize_bilinear", x.shape, (out_h, out_w))
    mh = interp_matrix(x.shape[-2], out_h)
    mw = interp_matrix(x.shape[-1], out_w)
    out = np.matmul(np.matmul(mh, x.data), mw.T)
    return make_result("upsample", out, (x,), lambda g: (np.matmul(np.matmul(mh.T, g), mw),))


def upsample_bilinear(x, factor: int = 2) -> Tensor:
    x = as_tensor(x)
    return resize_bilinear(x, x.shape[-2] * factor, x.shape[-1] * factor)


def depthwise_conv1d(x, weight, bias=None) -> Tensor:
    """Per-channel 1-D convolution along axis -2 with zero "same" padding.

    Shape rule: x (..., L, C), weight (C, k) with k odd, bias (C,) -> (..., L, C).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        inputs.append(bias)
    if x.ndim < 2 or weight.ndim != 2 or weight.shape[0] != x.shape[-1] or weight.shape[1] % 2 == 0:
        raise shape_error("depthwise_conv1d", x.shape, weight.shape)
    L = x.shape[-2]
    k = weight.shape[1]
    r = k // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (0, 0)]
    xp = np.pad(x.data, pad)
    wd = weight.data
    out = np.zeros(x.shape, dtype=DTYPE)
    for j in range(k):
        out += xp[..., j : j + L, :] * wd[:, j]
    if bias is not None:
        out += bias.data

    def bwd(g):
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wd)
        lead = tuple(range(g.ndim - 1))
        for j in range(k):
            gw[:, j] = (g * xp[..., j : j + L, :]).sum(axis=lead)
            if gxp is not None:
                gxp[..., j : j + L, :] += g * wd[:, j]
        gx = gxp[..., r : r + L, :] if gxp is not None else None
        gb = g.sum(axis=lead) if bias is not None else None
        return (gx, gw) + ((gb,) if bias is not None else ())

    return make_result("depthwise_conv1d", out, inputs, bwd)
