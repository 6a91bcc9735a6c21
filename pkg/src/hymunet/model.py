"""HyM-UNet assembly, checkpoint files and parameter counting."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List

import numpy as np

from .autodiff import nnops
from .autodiff.serialize import FormatError, read_array, write_array
from .autodiff.tensor import Tensor, as_tensor
from .nn.blocks import RCB, DecoderBlock, MGFSkip, OutputHead, PatchEmbed, VSSBlock, ConvBNReLU
from .nn.module import Module
from .ss2d import SCAN_MODES

STAGE_KINDS = ("rcb", "vss")


@dataclass
class ModelConfig:
    stage_widths: List[int] = field(default_factory=lambda: [32, 64, 128, 256])
    blocks_per_stage: List[int] = field(default_factory=lambda: [2, 2, 2, 2])
    stage_kinds: List[str] = field(default_factory=lambda: ["rcb", "rcb", "vss", "vss"])
    skip_mode: str = "mgf"
    state_dim: int = 8
    expand: int = 2
    conv1d_kernel: int = 3
    scan_mode: str = "rowmirror"
    selective: bool = True
    per_instance_norm: bool = False
    in_channels: int = 3
    input_size: int = 64
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        w = self.stage_widths
        if len(w) != 4 or len(self.blocks_per_stage) != 4 or len(self.stage_kinds) != 4:
            raise ValueError("stage_widths, blocks_per_stage and stage_kinds need 4 entries each")
        if any(x <= 0 for x in w) or any(b < 0 for b in self.blocks_per_stage):
            raise ValueError(f"stage widths must be positive, got {w}")
        if any(a > b for a, b in zip(w, w[1:])):
            raise ValueError(f"stage widths must be nondecreasing, got {w}")
        if self.input_size % 32:
            raise ValueError(f"input_size {self.input_size} must be a multiple of 32")
        if any(k not in STAGE_KINDS for k in self.stage_kinds):
            raise ValueError(f"stage kinds must be from {STAGE_KINDS}, got {self.stage_kinds}")
        if self.scan_mode not in SCAN_MODES:
            raise ValueError(f"scan_mode must be one of {SCAN_MODES}")
        if self.skip_mode not in ("mgf", "concat"):
            raise ValueError(f"skip_mode must be mgf or concat, got {self.skip_mode!r}")
        if self.conv1d_kernel % 2 == 0:
            raise ValueError("conv1d_kernel must be odd")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown model config keys: {unknown}")
        return cls(**d)


def ablation_variant(cfg: ModelConfig, variant: str) -> ModelConfig:
    """Return a copy of ``cfg`` altered for one of the ablation variants."""
    d = asdict(cfg)
    if variant == "full":
        pass
    elif variant == "plain-concat":
        d["skip_mode"] = "concat"
    elif variant == "pure-cnn":
        d["stage_kinds"] = ["rcb"] * 4
    elif variant == "pure-mamba":
        d["stage_kinds"] = ["vss"] * 4
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return ModelConfig(**d)


VARIANTS = ("full", "plain-concat", "pure-cnn", "pure-mamba")


class HyMUNet(Module):
    """Hybrid encoder (conv stages then state-space stages), gated skips, conv decoder.

    Encoder features sit at H/4, H/8, H/16 and H/32. The deepest feature is
    the bottleneck; the decoder climbs back to H/4 fusing one encoder feature
    per stage, then upsamples x4 before the sigmoid head.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        self.cfg = cfg = cfg or ModelConfig()
        rng = np.random.default_rng(cfg.seed)
        w = cfg.stage_widths
        pin = cfg.per_instance_norm
        self.stem = PatchEmbed(cfg.in_channels, w[0], rng, per_instance=pin)
        self.down = []
        self.stages = []
        for i in range(4):
            if i > 0:
                self.down.append(ConvBNReLU(w[i - 1], w[i], rng, stride=2, per_instance=pin, activation=False))
            blocks = []
            for _ in range(cfg.blocks_per_stage[i]):
                if cfg.stage_kinds[i] == "rcb":
                    blocks.append(RCB(w[i], w[i], rng, per_instance=pin))
                else:
                    blocks.append(VSSBlock(w[i], rng, state_dim=cfg.state_dim, expand=cfg.expand,
                                           conv_kernel=cfg.conv1d_kernel, scan_mode=cfg.scan_mode,
                                           selective=cfg.selective))
            self.stages.append(_Stage(blocks))
        self.skips = [MGFSkip(w[i], w[i + 1], rng, mode=cfg.skip_mode) for i in range(3)]
        self.decoders = [DecoderBlock(w[i] + w[i + 1], w[i], rng, per_instance=pin) for i in range(3)]
        self.head = OutputHead(w[0], rng)
        self.last_resolutions: List[int] = []

    def encode(self, x) -> List[Tensor]:
        feats = []
        h = self.stem(x)
        for i, stage in enumerate(self.stages):
            if i > 0:
                h = self.down[i - 1](h)
            h = stage(h)
            feats.append(h)
        return feats

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) input, got shape {x.shape}")
        if not np.all(np.isfinite(x.data)):
            raise ValueError("input contains non-finite values")
        feats = self.encode(x)
        self.last_resolutions = [f.shape[-1] for f in feats]
        d = feats[3]
        for i in (2, 1, 0):
            d = self.decoders[i](self.skips[i](feats[i], d))
        d = nnops.upsample_bilinear(d, 4)
        return self.head(d)

    def set_backend(self, backend: str | None) -> None:
        for m in self.modules():
            if isinstance(m, VSSBlock):
                m.backend = backend


class _Stage(Module):
    def __init__(self, blocks):
        self.blocks = blocks

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return x


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


# ---------------------------------------------------------------------------
# checkpoints: b"HYMC", u32 version, u64 manifest length, JSON manifest, then one
# tensor record per manifest key in order.

CKPT_MAGIC = b"HYMC"
CKPT_VERSION = 1


def save_checkpoint(model: HyMUNet, path, extra: Dict | None = None) -> None:
    state = model.state_dict()
    keys = list(state)
    manifest = {"config": asdict(model.cfg), "keys": keys, "extra": extra or {}}
    blob = json.dumps(manifest, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
    buf.write(blob)
    for k in keys:
        write_array(buf, state[k])
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def read_checkpoint(path):
    """Parse a checkpoint fully; returns (manifest, state). Raises FormatError on damage."""
    data = Path(path).read_bytes()
    fh = io.BytesIO(data)
    head = fh.read(16)
    if len(head) < 16 or head[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, n = struct.unpack("<IQ", head[4:])
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    blob = fh.read(n)
    if len(blob) != n:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt manifest ({e})") from None
    state = {k: read_array(fh) for k in manifest["keys"]}
    if fh.read(1):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    return manifest, state


def load_checkpoint(path, expect: ModelConfig | None = None) -> HyMUNet:
    """Build a model from a checkpoint; with ``expect`` set, reject config differences."""
    manifest, state = read_checkpoint(path)
    saved = manifest["config"]
    if expect is not None:
        want = asdict(expect)
        diffs = [f"{k}: file={saved.get(k)!r} expected={want[k]!r}"
                 for k in sorted(want) if k != "seed" and saved.get(k) != want[k]]
        if diffs:
            raise ValueError("checkpoint config mismatch: " + "; ".join(diffs))
    model = HyMUNet(ModelConfig.from_dict(saved))
    model.load_state_dict(state)
    model.eval()
    return model
