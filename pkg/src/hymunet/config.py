"""Flat ``section.key = value`` run configuration files.

Example::

    # lines starting with '#' are comments
    model.stage_widths = 32, 64, 128, 256
    model.scan_mode = rowmirror
    train.epochs = 50
    loss.lambda2 = 0.5
    data.size = 64

Sections: ``model`` (ModelConfig), ``train`` (TrainConfig), ``loss``
(LossWeights), ``data`` (DataConfig). Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from .losses import LossWeights
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    seed: int = 42
    count: int = 300
    size: int = 64
    artifacts: float = 1.0
    ratios: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_seed: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def loss(self) -> LossWeights:
        return self.train.loss


def _convert(raw: str, typ, key: str):
    origin = typing.get_origin(typ)
    try:
        if origin in (list, List):
            (inner,) = typing.get_args(typ)
            return [_convert(part.strip(), inner, key) for part in raw.split(",") if part.strip()]
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def _field_types(cls) -> Dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "loss": LossWeights, "data": DataConfig}


def parse_config(text: str) -> Dict[str, Dict[str, object]]:
    """Parse config text into ``{section: {key: typed value}}``."""
    out: Dict[str, Dict[str, object]] = {s: {} for s in SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config key {key!r} (sections: {', '.join(SECTIONS)})")
        types = _field_types(SECTIONS[section])
        if name not in types or (section == "train" and name == "loss"):
            raise ConfigError(f"unknown config key {key!r}")
        out[section][name] = _convert(raw, types[name], key)
    return out


def build_config(sections: Dict[str, Dict[str, object]]) -> RunConfig:
    try:
        loss = LossWeights(**sections.get("loss", {}))
        train = TrainConfig(**sections.get("train", {}), loss=loss)
        model = ModelConfig(**sections.get("model", {}))
        data = DataConfig(**sections.get("data", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return RunConfig(model=model, train=train, data=data)


def load_config(path=None, overrides: Dict[str, str] | None = None) -> RunConfig:
    """Read a config file (optional) and apply ``section.key -> raw value`` overrides."""
    text = Path(path).read_text() if path else ""
    if overrides:
        text += "\n" + "\n".join(f"{k} = {v}" for k, v in overrides.items())
    return build_config(parse_config(text))


def dump_config(cfg: RunConfig) -> str:
    lines: List[Tuple[str, object]] = []
    for section, obj in (("model", cfg.model), ("train", cfg.train), ("loss", cfg.loss), ("data", cfg.data)):
        for f in dataclasses.fields(obj):
            if section == "train" and f.name == "loss":
                continue
            v = getattr(obj, f.name)
            if isinstance(v, list):
                v = ", ".join(str(x) for x in v)
            lines.append((f"{section}.{f.name}", v))
    return "".join(f"{k} = {v}\n" for k, v in lines)
