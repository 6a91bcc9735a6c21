"""Encoder, skip-fusion and decoder building blocks on (B, C, H, W) feature maps."""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import nnops
from ..autodiff.tensor import Tensor, concat, relu, sigmoid, silu, transpose
from ..ss2d import ss2d_apply
from ..ssm.params import SsmParams
from .module import BatchNorm2d, Conv2d, Linear, Module, Parameter


class ConvBNReLU(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, stride: int = 1,
                 per_instance: bool = False, activation: bool = True):
        self.conv = Conv2d(in_ch, out_ch, 3, rng, stride=stride, bias=False)
        self.bn = BatchNorm2d(out_ch, per_instance=per_instance)
        self.activation = activation

    def forward(self, x):
        y = self.bn(self.conv(x))
        return relu(y) if self.activation else y


class RCB(Module):
    """Residual convolution block: two 3x3 conv+BN+ReLU layers plus the input.

    A 1x1 projection carries the residual when the channel count changes.
    """

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, per_instance: bool = False):
        self.layer1 = ConvBNReLU(in_ch, out_ch, rng, per_instance=per_instance)
        self.layer2 = ConvBNReLU(out_ch, out_ch, rng, per_instance=per_instance)
        self.proj = Conv2d(in_ch, out_ch, 1, rng, bias=False) if in_ch != out_ch else None

    def forward(self, x):
        residual = self.proj(x) if self.proj is not None else x
        return self.layer2(self.layer1(x)) + residual


class VSSBlock(Module):
    """Gated visual state-space block.

    ``out = Linear(SS2D(Conv1d(SiLU(Linear_x(F)))) * SiLU(Linear_z(F))) + F``,
    where the depthwise Conv1d runs along each scan direction's sequence.
    The two input projections have separate weights.
    """

    def __init__(self, channels: int, rng: np.random.Generator, state_dim: int = 8, expand: int = 2,
                 conv_kernel: int = 3, scan_mode: str = "rowmirror", selective: bool = True):
        if conv_kernel % 2 == 0:
            raise ValueError(f"conv1d kernel width must be odd, got {conv_kernel}")
        inner = expand * channels
        self.in_x = Linear(channels, inner, rng)
        self.in_z = Linear(channels, inner, rng)
        bound = math.sqrt(6.0 / conv_kernel)
        self.conv1d_weight = Parameter(rng.uniform(-bound, bound, size=(inner, conv_kernel)))
        self.conv1d_bias = Parameter(np.zeros(inner))
        self.ssm = SsmParams(inner, state_dim, rng, directions=4, selective=selective)
        self.out_proj = Linear(inner, channels, rng)
        self.scan_mode = scan_mode
        self.backend = None

    def _conv1d(self, seqs):
        return nnops.depthwise_conv1d(seqs, self.conv1d_weight, self.conv1d_bias)

    def forward(self, x):
        f = transpose(x, (0, 2, 3, 1))
        xp = silu(self.in_x(f))
        xpp = ss2d_apply(xp, self.ssm, scan_mode=self.scan_mode, pre_scan=self._conv1d, backend=self.backend)
        gate = silu(self.in_z(f))
        y = self.out_proj(xpp * gate)
        return transpose(y, (0, 3, 1, 2)) + x


class MGFGate(Module):
    """Single-channel spatial gate ``sigmoid(conv1x1(relu(conv3x3(d_up))))``."""

    def __init__(self, in_ch: int, hidden: int, rng: np.random.Generator):
        self.conv3 = Conv2d(in_ch, hidden, 3, rng)
        self.conv1 = Conv2d(hidden, 1, 1, rng)

    def forward(self, d_up):
        return sigmoid(self.conv1(relu(self.conv3(d_up))))


class MGFSkip(Module):
    """Fuse encoder feature ``E`` with the decoder feature ``D`` one stage below.

    ``mode="mgf"`` gates the encoder feature and re-adds it,
    ``concat(E + E*G, up(D))``; ``mode="concat"`` is the plain U-Net skip
    ``concat(E, up(D))``.
    """

    def __init__(self, enc_ch: int, dec_ch: int, rng: np.random.Generator, mode: str = "mgf"):
        if mode not in ("mgf", "concat"):
            raise ValueError(f"unknown skip mode {mode!r}")
        self.mode = mode
        self.gate = MGFGate(dec_ch, enc_ch, rng) if mode == "mgf" else None
        self.last_gate = None

    def forward(self, E, D):
        if E.shape[2] != 2 * D.shape[2] or E.shape[3] != 2 * D.shape[3] or E.shape[0] != D.shape[0]:
            raise ValueError(f"skip fusion needs decoder at half the encoder resolution, got {E.shape} and {D.shape}")
        d_up = nnops.upsample_bilinear(D, 2)
        if self.mode == "concat":
            return concat([E, d_up], axis=1)
        g = self.gate(d_up)
        self.last_gate = g.data
        return concat([E + E * g, d_up], axis=1)


class PatchEmbed(Module):
    """Two stride-2 3x3 conv+BN+ReLU layers: (B, 3, H, W) -> (B, C, H/4, W/4)."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, per_instance: bool = False):
        self.layer1 = ConvBNReLU(in_ch, out_ch, rng, stride=2, per_instance=per_instance)
        self.layer2 = ConvBNReLU(out_ch, out_ch, rng, stride=2, per_instance=per_instance)

    def forward(self, x):
        H, W = x.shape[-2:]
        if H % 32 or W % 32:
            raise ValueError(f"input size {H}x{W} must be a multiple of 32")
        return self.layer2(self.layer1(x))


class DecoderBlock(Module):
    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator, per_instance: bool = False):
        self.layer1 = ConvBNReLU(in_ch, out_ch, rng, per_instance=per_instance)
        self.layer2 = ConvBNReLU(out_ch, out_ch, rng, per_instance=per_instance)

    def forward(self, x):
        return self.layer2(self.layer1(x))


class OutputHead(Module):
    def __init__(self, in_ch: int, rng: np.random.Generator):
        self.conv = Conv2d(in_ch, 1, 1, rng)

    def forward(self, x) -> Tensor:
        return sigmoid(self.conv(x))
