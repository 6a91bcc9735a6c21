"""Synthetic lesion data, dataset directories, augmentation and splits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .autodiff.nnops import interp_matrix

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".bmp")
MASK_SUFFIXES = (".png", ".pgm", ".bmp")


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool
    id: str

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(f"{self.id}: image {self.image.shape[:2]} and mask {self.mask.shape} sizes differ")


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# synthetic generation


def _segment_alpha(yy, xx, p0, p1, width):
    """Antialiased coverage of a thick segment from p0 to p1."""
    d = np.subtract(p1, p0, dtype=np.float64)
    L2 = float(d @ d) or 1e-12
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / L2, 0.0, 1.0)
    dist = np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))
    return np.clip(width / 2.0 - dist + 0.5, 0.0, 1.0)


def _blend(img, alpha, color):
    a = alpha[..., None]
    return img * (1.0 - a) + a * np.asarray(color)


def _blob_mask(rng, size, yy, xx):
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    ry, rx = rng.uniform(0.12, 0.3, size=2) * size
    theta0 = rng.uniform(0, math.pi)
    coeffs = rng.normal(scale=0.06, size=(3, 2))
    dy, dx = yy - cy, xx - cx
    c, s = math.cos(theta0), math.sin(theta0)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    r = np.hypot(u, v)
    phi = np.arctan2(v, u)
    boundary = 1.0 + sum(a * np.cos((k + 2) * phi) + b * np.sin((k + 2) * phi) for k, (a, b) in enumerate(coeffs))
    return r <= boundary


def generate_sample(seed: int, index: int, size: int = 64, artifacts: float = 1.0) -> Sample:
    """One synthetic lesion image; deterministic in (seed, index).

    ``artifacts`` scales how much hair, specular and ruler clutter is drawn
    (0 disables it). Clutter is painted on the image only.
    """
    if size % 32:
        raise ValueError(f"size {size} must be a multiple of 32")
    rng = np.random.default_rng([seed, index])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    for _ in range(100):
        n_blobs = int(rng.integers(1, 4))
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(n_blobs):
            mask |= _blob_mask(rng, size, yy, xx)
        frac = mask.mean()
        if 0.05 <= frac <= 0.6:
            break
    else:  # pragma: no cover - the acceptance window is wide
        raise RuntimeError("could not draw a mask inside the foreground window")

    skin = np.array([0.85, 0.65, 0.55]) + rng.normal(scale=0.04, size=3)
    lesion = np.array([0.45, 0.28, 0.2]) + rng.normal(scale=0.05, size=3)
    low = np.zeros((size, size))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 3.0, size=2) * 2 * math.pi / size
        low += rng.uniform(0.01, 0.04) * np.sin(fy * yy + fx * xx + rng.uniform(0, 2 * math.pi))
    img = np.broadcast_to(skin, (size, size, 3)) + low[..., None]
    soft = ndimage.gaussian_filter(mask.astype(np.float64), sigma=0.7)
    texture = 1.0 + 0.08 * rng.normal(size=(size, size))
    img = img * (1.0 - soft[..., None]) + soft[..., None] * lesion * texture[..., None]
    img = img + rng.normal(scale=0.02, size=img.shape)

    if artifacts > 0:
        n_hair = rng.poisson(3 * artifacts)
        for _ in range(n_hair):
            p = rng.uniform(0, size, size=2)
            heading = rng.uniform(0, 2 * math.pi)
            width = rng.uniform(0.6, 1.3)
            for _ in range(int(rng.integers(3, 7))):
                heading += rng.normal(scale=0.35)
                step = rng.uniform(0.08, 0.2) * size
                q = p + step * np.array([math.sin(heading), math.cos(heading)])
                img = _blend(img, _segment_alpha(yy, xx, p, q, width), (0.12, 0.08, 0.06))
                p = q
        for _ in range(rng.poisson(4 * artifacts)):
            cy, cx = rng.uniform(0, size, size=2)
            rad = rng.uniform(0.7, 1.8)
            alpha = np.clip(rad - np.hypot(yy - cy, xx - cx) + 0.5, 0.0, 1.0)
            img = _blend(img, alpha, (1.0, 1.0, 0.97))
        if rng.random() < min(1.0, 0.5 * artifacts):
            edge = int(rng.integers(0, 4))
            off = rng.uniform(0.03, 0.12) * size
            lo, hi = sorted(rng.uniform(0, size, size=2))
            if edge < 2:
                y0 = off if edge == 0 else size - 1 - off
                p0, p1 = np.array([y0, lo]), np.array([y0, hi])
                ticks = [(np.array([y0, t]), np.array([y0 + (2.5 if edge == 0 else -2.5), t]))
                         for t in np.arange(lo, hi, 4.0)]
            else:
                x0 = off if edge == 2 else size - 1 - off
                p0, p1 = np.array([lo, x0]), np.array([hi, x0])
                ticks = [(np.array([t, x0]), np.array([t, x0 + (2.5 if edge == 2 else -2.5)]))
                         for t in np.arange(lo, hi, 4.0)]
            img = _blend(img, _segment_alpha(yy, xx, p0, p1, 1.0), (0.2, 0.2, 0.22))
            for a, b in ticks:
                img = _blend(img, _segment_alpha(yy, xx, a, b, 0.8), (0.2, 0.2, 0.22))

    img = np.clip(img, 0.0, 1.0)
    return Sample(img, mask, f"syn{seed}_{index:05d}")


def generate_synthetic(seed: int, count: int, size: int = 64, artifacts: float = 1.0) -> List[Sample]:
    return [generate_sample(seed, i, size, artifacts) for i in range(count)]


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class Transform:
    hflip: bool = False
    vflip: bool = False
    angle: float = 0.0  # degrees, counter-clockwise

    @property
    def is_identity(self) -> bool:
        return not self.hflip and not self.vflip and self.angle == 0.0


def draw_transform(rng: np.random.Generator, max_angle: float = 90.0) -> Transform:
    h = bool(rng.random() < 0.5)
    v = bool(rng.random() < 0.5)
    return Transform(h, v, float(rng.uniform(-max_angle, max_angle)))


def _rotation_coords(n: int, angle: float):
    theta = math.radians(angle)
    # snap so multiples of 90 degrees map exactly onto the pixel grid
    c, s = round(math.cos(theta), 12), round(math.sin(theta), 12)
    ctr = (n - 1) / 2.0
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) - ctr
    return c * yy + s * xx + ctr, -s * yy + c * xx + ctr


def rotate_image(img: np.ndarray, angle: float, fill) -> np.ndarray:
    """Bilinear rotation of an (n, n, C) image about its centre; out-of-frame -> ``fill``."""
    n = img.shape[0]
    sy, sx = _rotation_coords(n, angle)
    y0, x0 = np.floor(sy).astype(int), np.floor(sx).astype(int)
    fy, fx = sy - y0, sx - x0
    out = np.zeros_like(img)
    weight_in = np.zeros(sy.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yi, xi = y0 + dy, x0 + dx
            ok = (yi >= 0) & (yi < n) & (xi >= 0) & (xi < n)
            w = np.where(ok, wy * wx, 0.0)
            out += w[..., None] * img[np.clip(yi, 0, n - 1), np.clip(xi, 0, n - 1)]
            weight_in += w
    return out + (1.0 - weight_in)[..., None] * np.asarray(fill)


def rotate_mask(mask: np.ndarray, angle: float) -> np.ndarray:
    """Nearest-neighbour rotation; out-of-frame pixels become background."""
    n = mask.shape[0]
    sy, sx = _rotation_coords(n, angle)
    yi, xi = np.floor(sy + 0.5).astype(int), np.floor(sx + 0.5).astype(int)
    ok = (yi >= 0) & (yi < n) & (xi >= 0) & (xi < n)
    return ok & mask[np.clip(yi, 0, n - 1), np.clip(xi, 0, n - 1)]


def augment(sample: Sample, rng: Optional[np.random.Generator] = None,
            transform: Optional[Transform] = None) -> Sample:
    """Apply flips then a rotation, identically to image and mask.

    Exactly one of ``rng`` (draw a random transform) or ``transform`` is used.
    """
    if sample.image.shape[0] != sample.image.shape[1]:
        raise ValueError(f"{sample.id}: augmentation needs square images")
    t = transform if transform is not None else draw_transform(rng)
    if t.is_identity:
        return sample
    img, mask = sample.image, sample.mask
    if t.hflip:
        img, mask = img[:, ::-1], mask[:, ::-1]
    if t.vflip:
        img, mask = img[::-1], mask[::-1]
    if t.angle != 0.0:
        img = rotate_image(img, t.angle, img.reshape(-1, img.shape[-1]).mean(axis=0))
        mask = rotate_mask(mask, t.angle)
    return Sample(np.ascontiguousarray(img), np.ascontiguousarray(mask), sample.id)


# ---------------------------------------------------------------------------
# image files and dataset directories


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of (H, W, C) to (size, size, C), half-pixel centres."""
    mh = interp_matrix(img.shape[0], size)
    mw = interp_matrix(img.shape[1], size)
    return np.einsum("oh,hwc,pw->opc", mh, img, mw)


def resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbour resize of a 2-D mask, thresholded at 0.5."""
    h, w = mask.shape
    ri = np.minimum(((np.arange(size) + 0.5) * h / size).astype(int), h - 1)
    ci = np.minimum(((np.arange(size) + 0.5) * w / size).astype(int), w - 1)
    return np.asarray(mask, dtype=np.float64)[np.ix_(ri, ci)] >= 0.5


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        raw = np.asarray(im.convert("L"), dtype=np.float64)
    peak = raw.max()
    if peak > 0 and not np.all((raw == 0) | (raw == peak)):
        raise DatasetError(f"{path}: mask is not binary")
    return raw / peak if peak > 0 else raw


def write_image(path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def _index_dir(d: Path, suffixes) -> Dict[str, Path]:
    out = {}
    for p in sorted(d.iterdir()):
        if p.suffix.lower() in suffixes:
            stem = p.stem[: -len("_segmentation")] if p.stem.endswith("_segmentation") else p.stem
            out[stem] = p
    return out


def ingest_isic(dir_images, dir_masks, size: int) -> List[Sample]:
    """Load image/mask pairs matched by id, resized to size x size.

    Masks may be named ``<id>.png`` or ``<id>_segmentation.png``.
    """
    images = _index_dir(Path(dir_images), IMAGE_SUFFIXES)
    masks = _index_dir(Path(dir_masks), MASK_SUFFIXES)
    if not images and not masks:
        log.warning("no image/mask files found under %s and %s", dir_images, dir_masks)
        return []
    unpaired = sorted(set(images) ^ set(masks))
    if unpaired:
        raise DatasetError(f"missing image/mask counterpart for: {', '.join(unpaired)}")
    samples = []
    for key in sorted(images):
        try:
            img = read_image(images[key])
            mask = read_mask(masks[key])
        except DatasetError:
            raise
        except Exception as e:
            raise DatasetError(f"{key}: unreadable file ({e})") from e
        if img.shape[:2] != mask.shape:
            raise DatasetError(f"{key}: image {img.shape[:2]} and mask {mask.shape} sizes differ")
        samples.append(Sample(np.clip(resize_image(img, size), 0.0, 1.0), resize_mask(mask, size), key))
    return samples


def save_dataset(root, splits: Dict[str, Sequence[Sample]]) -> None:
    """Write images/<id>.png, masks/<id>.png and a manifest of ``id<TAB>split`` lines."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for split_name, samples in splits.items():
        for s in samples:
            write_image(root / "images" / f"{s.id}.png", s.image)
            write_mask(root / "masks" / f"{s.id}.png", s.mask)
            lines.append(f"{s.id}\t{split_name}\n")
    (root / "manifest.tsv").write_text("".join(lines))


def load_dataset(root, size: Optional[int] = None) -> Dict[str, List[Sample]]:
    """Read a directory written by :func:`save_dataset`, grouped by split name."""
    root = Path(root)
    manifest = root / "manifest.tsv"
    if not manifest.exists():
        raise DatasetError(f"{root}: no manifest.tsv")
    out: Dict[str, List[Sample]] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        sid, split_name = line.split("\t")
        img = read_image(root / "images" / f"{sid}.png")
        mask = read_mask(root / "masks" / f"{sid}.png") >= 0.5
        if img.shape[:2] != mask.shape:
            raise DatasetError(f"{sid}: image {img.shape[:2]} and mask {mask.shape} sizes differ")
        if size is not None and img.shape[0] != size:
            img, mask = resize_image(img, size), resize_mask(mask, size)
        out.setdefault(split_name, []).append(Sample(img, mask, sid))
    return out


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitSpec:
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be 3 nonnegative numbers summing to 1, got {self.ratios}")


def split_sizes(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """Floor allocation for train and val; the test split takes the remainder."""
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split(dataset: Sequence, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then cut into (train, val, test)."""
    n = len(dataset)
    order = np.random.default_rng(spec.seed).permutation(n)
    a, b, _ = split_sizes(n, spec.ratios)
    items = [dataset[i] for i in order]
    return items[:a], items[a:a + b], items[a + b:]


def to_arrays(samples: Sequence[Sample]):
    """Stack samples into (B, 3, H, W) images and (B, 1, H, W) float masks."""
    x = np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float64)
    y = np.stack([s.mask[None] for s in samples]).astype(np.float64)
    return x, y
