"""Overlap and boundary-distance metrics on binary masks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import ndimage

UNDEFINED = float("nan")


def binarize(y_hat, threshold: float = 0.5) -> np.ndarray:
    """Foreground where ``y_hat >= threshold``."""
    return np.asarray(y_hat) >= threshold


def _pair(P, G):
    P = np.asarray(P, dtype=bool)
    G = np.asarray(G, dtype=bool)
    if P.shape != G.shape:
        raise ValueError(f"mask shapes differ: {P.shape} vs {G.shape}")
    return P, G


def dsc(P, G) -> float:
    P, G = _pair(P, G)
    total = int(P.sum()) + int(G.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((P & G).sum()) / total


def iou(P, G) -> float:
    P, G = _pair(P, G)
    union = int((P | G).sum())
    if union == 0:
        return 1.0
    return int((P & G).sum()) / union


def precision(P, G) -> float:
    P, G = _pair(P, G)
    npos = int(P.sum())
    if npos == 0:
        return 1.0 if not G.any() else 0.0
    return int((P & G).sum()) / npos


def boundary(mask) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background (outside counts as background)."""
    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def _directed_percentile(src: np.ndarray, dst: np.ndarray, q: float, fast: bool) -> float:
    if fast:
        # exact Euclidean distance to the nearest dst boundary pixel
        dist = ndimage.distance_transform_edt(~dst)
        d = dist[src]
    else:
        a = np.argwhere(src).astype(np.float64)
        b = np.argwhere(dst).astype(np.float64)
        d = np.full(len(a), np.inf)
        for start in range(0, len(b), 512):
            chunk = b[start:start + 512]
            dd = np.sqrt(((a[:, None, :] - chunk[None, :, :]) ** 2).sum(-1))
            d = np.minimum(d, dd.min(axis=1))
    return float(np.percentile(d, q, method="linear"))


def hd95(P, G, fast: bool = False, q: float = 95.0) -> float:
    """Symmetric 95th-percentile boundary distance in pixels.

    Returns NaN (undefined) when either mask is empty. ``fast`` swaps the
    brute-force nearest-neighbour search for a Euclidean distance transform.
    """
    P, G = _pair(P, G)
    if not P.any() or not G.any():
        return UNDEFINED
    bp, bg = boundary(P), boundary(G)
    return max(_directed_percentile(bp, bg, q, fast), _directed_percentile(bg, bp, q, fast))


def hausdorff(P, G) -> float:
    return hd95(P, G, q=100.0)


@dataclass
class MetricReport:
    """Per-image metrics plus aggregates.

    HD95 is NaN for images where prediction or ground truth is empty; those
    images are left out of the HD95 mean and counted in ``hd95_undefined``.
    """

    ids: List[str] = field(default_factory=list)
    iou: List[float] = field(default_factory=list)
    dsc: List[float] = field(default_factory=list)
    hd95: List[float] = field(default_factory=list)
    precision: List[float] = field(default_factory=list)

    COLUMNS = ("iou", "dsc", "hd95", "precision")

    def add(self, image_id: str, P, G, fast_hd: bool = False) -> None:
        self.ids.append(image_id)
        self.iou.append(iou(P, G))
        self.dsc.append(dsc(P, G))
        self.hd95.append(hd95(P, G, fast=fast_hd))
        self.precision.append(precision(P, G))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def hd95_undefined(self) -> int:
        return int(sum(math.isnan(v) for v in self.hd95))

    def aggregate(self) -> Dict[str, float]:
        out: Dict[str, float] = {"count": float(len(self))}
        for col in self.COLUMNS:
            vals = np.asarray([v for v in getattr(self, col) if not math.isnan(v)], dtype=np.float64)
            out[f"{col}_mean"] = float(vals.mean()) if vals.size else UNDEFINED
            out[f"{col}_std"] = float(vals.std()) if vals.size else UNDEFINED
        out["hd95_undefined"] = float(self.hd95_undefined)
        return out

    def mean(self, col: str) -> float:
        return self.aggregate()[f"{col}_mean"]

    def to_table(self, sep: str = "\t") -> str:
        lines = [sep.join(("id", "IoU", "DSC", "HD95_px", "PRE"))]
        for row in zip(self.ids, self.iou, self.dsc, self.hd95, self.precision):
            lines.append(sep.join([row[0]] + [_fmt(v) for v in row[1:]]))
        agg = self.aggregate()
        lines.append(sep.join(["mean"] + [_fmt(agg[f"{c}_mean"]) for c in self.COLUMNS]))
        lines.append(sep.join(["std"] + [_fmt(agg[f"{c}_std"]) for c in self.COLUMNS]))
        if self.hd95_undefined:
            lines.append(f"# hd95 undefined (empty mask) for {self.hd95_undefined} image(s); excluded from its mean")
        return "\n".join(lines) + "\n"

    def to_keyvalue(self) -> str:
        agg = self.aggregate()
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in agg.items())


def _fmt(v: float) -> str:
    return "undefined" if isinstance(v, float) and math.isnan(v) else f"{v:.6f}"
