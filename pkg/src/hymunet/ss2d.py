"""Four-direction 2-D selective scan over feature maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, List, Optional, Sequence

import numpy as np

from .autodiff.tensor import Tensor, as_tensor, concat, reshape, shape_error, take

if TYPE_CHECKING:  # runtime import would cycle through hymunet.nn
    from .ssm.params import SsmParams

SCAN_MODES = ("rowmirror", "rowcol")


def direction_permutations(H: int, W: int, scan_mode: str = "rowmirror") -> List[np.ndarray]:
    """Sequence-index -> flat (row * W + col) index for the four scan orders.

    ``rowmirror``: row-major raster from the top-left, its reverse, the raster
    of the horizontally mirrored grid (top-right start) and its reverse.
    ``rowcol``: row-major and column-major rasters and their reverses.
    """
    if H < 1 or W < 1:
        raise ValueError(f"grid must be at least 1x1, got {H}x{W}")
    grid = np.arange(H * W).reshape(H, W)
    d1 = grid.reshape(-1)
    if scan_mode == "rowmirror":
        d3 = grid[:, ::-1].reshape(-1)
    elif scan_mode == "rowcol":
        d3 = grid.T.reshape(-1)
    else:
        raise ValueError(f"unknown scan_mode {scan_mode!r}; expected one of {SCAN_MODES}")
    return [d1, d1[::-1].copy(), d3.copy(), d3[::-1].copy()]


@dataclass
class DirectionalSequences:
    """Four unfolded sequences with their sequence -> position permutations."""

    height: int
    width: int
    perms: List[np.ndarray]
    sequences: Optional[List[np.ndarray]] = None

    def positions(self, k: int) -> np.ndarray:
        """(row, col) visited at each step of direction ``k``."""
        p = self.perms[k]
        return np.stack([p // self.width, p % self.width], axis=1)


def unfold_directions(F: np.ndarray, scan_mode: str = "rowmirror") -> DirectionalSequences:
    """Unfold an (H, W, C) map into four (H*W, C) sequences."""
    F = np.asarray(F)
    H, W = F.shape[:2]
    perms = direction_permutations(H, W, scan_mode)
    flat = F.reshape(H * W, *F.shape[2:])
    return DirectionalSequences(H, W, perms, [flat[p] for p in perms])


def merge_directions(ys: Sequence[np.ndarray], dirs: DirectionalSequences) -> np.ndarray:
    """Scatter each sequence back to its grid positions and sum the four maps."""
    L = dirs.height * dirs.width
    if len(ys) != len(dirs.perms):
        raise ValueError(f"expected {len(dirs.perms)} sequences, got {len(ys)}")
    out = None
    for y, p in zip(ys, dirs.perms):
        y = np.asarray(y)
        if y.shape[0] != L:
            raise ValueError(f"sequence length {y.shape[0]} does not match grid {dirs.height}x{dirs.width}")
        grid = np.zeros_like(y, dtype=np.float64)
        grid[p] = y
        out = grid if out is None else out + grid
    return out.reshape(dirs.height, dirs.width, *out.shape[1:])


def unfold_tensor(x: Tensor, perms: Sequence[np.ndarray]) -> Tensor:
    """(Bsz, L, C) -> (K, Bsz, L, C), one gathered copy per direction."""
    parts = [reshape(take(x, p, axis=1), (1,) + x.shape) for p in perms]
    return concat(parts, axis=0)


def merge_tensor(ys: Tensor, perms: Sequence[np.ndarray]) -> Tensor:
    """(K, Bsz, L, C) -> (Bsz, L, C): undo each permutation and sum."""
    out = None
    for k, p in enumerate(perms):
        back = take(ys[k], np.argsort(p), axis=1)
        out = back if out is None else out + back
    return out


def ss2d_apply(F, params: "SsmParams", scan_mode: str = "rowmirror",
               pre_scan: Optional[Callable[[Tensor], Tensor]] = None, backend: Optional[str] = None) -> Tensor:
    """Apply the four-direction scan to a channels-last map (Bsz, H, W, C).

    ``pre_scan`` maps the stacked direction sequences (4, Bsz, L, C) before
    scanning; the VSS block uses it for its depthwise 1-D convolution.
    """
    F = as_tensor(F)
    if F.ndim != 4:
        raise shape_error("ss2d", F.shape)
    Bsz, H, W, C = F.shape
    if params.directions != 4 or params.channels != C:
        raise shape_error("ss2d", F.shape, (params.directions, params.channels))
    perms = direction_permutations(H, W, scan_mode)
    seqs = unfold_tensor(reshape(F, (Bsz, H * W, C)), perms)
    if pre_scan is not None:
        seqs = pre_scan(seqs)
    ys = params(seqs, backend=backend)
    return reshape(merge_tensor(ys, perms), (Bsz, H, W, C))
