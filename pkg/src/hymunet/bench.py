"""Scan-vs-attention timing and the ablation harness."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .model import VARIANTS, HyMUNet, ModelConfig, ablation_variant
from .ssm.scan import BACKENDS, get_kernels
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

MIN_MEASURE_S = 1e-3


def attention(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray) -> np.ndarray:
    """Single-head self-attention ``softmax(Q K^T / sqrt(d)) V`` for x of shape (L, D)."""
    q, k, v = x @ wq, x @ wk, x @ wv
    s = q @ k.T / math.sqrt(q.shape[1])
    s -= s.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


@dataclass
class BenchRecord:
    method: str
    length: int
    mean_s: float
    min_s: float
    reps: int
    bytes_touched: int

    def row(self) -> str:
        return f"{self.method}\t{self.length}\t{self.mean_s:.6e}\t{self.min_s:.6e}\t{self.reps}\t{self.bytes_touched}"


BENCH_HEADER = "method\tL\tmean_s\tmin_s\treps\tbytes"


def _time(fn, reps: int, warmup: int = 2) -> Tuple[float, float, int]:
    for _ in range(warmup):
        fn()
    # repeat the call inside one measurement until it spans >= 1 ms
    inner = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        if time.perf_counter() - t0 >= MIN_MEASURE_S or inner >= 1 << 16:
            break
        inner *= 2
    if inner > 1:
        warnings.warn(f"call shorter than {MIN_MEASURE_S * 1e3:.0f} ms; timing {inner} calls per repetition",
                      RuntimeWarning, stacklevel=3)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        times.append((time.perf_counter() - t0) / inner)
    return float(np.mean(times)), float(np.min(times)), reps


def fit_slope(lengths: Sequence[int], times: Sequence[float]) -> float:
    """Least-squares slope of log(time) against log(L)."""
    return float(np.polyfit(np.log(lengths), np.log(times), 1)[0])


def bench_scan(lengths: Sequence[int], reps: int = 5, channels: int = 16, state_dim: int = 8,
               seed: int = 0, methods: Sequence[str] | None = None):
    """Time selective-scan backends and the attention baseline over sequence lengths.

    Returns (records, slopes) where ``slopes`` maps method -> fitted log-log
    slope of the per-call minimum time.
    """
    lengths = [int(n) for n in lengths]
    if len(lengths) < 4:
        raise ValueError("bench needs at least 4 lengths to fit a slope")
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ValueError("lengths must be strictly increasing")
    if lengths[-1] < 16 * lengths[0]:
        raise ValueError("lengths must span at least a factor of 16")
    if reps < 5:
        raise ValueError("reps must be at least 5")
    if methods is None:
        methods = [f"scan-{b}" for b in sorted(BACKENDS)] + ["attention"]
    rng = np.random.default_rng(seed)
    D, N = channels, state_dim
    A = -np.broadcast_to(np.arange(1, N + 1, dtype=np.float64), (1, D, N)).copy()
    wq, wk, wv = (rng.normal(scale=D ** -0.5, size=(D, D)) for _ in range(3))
    records: List[BenchRecord] = []
    for L in lengths:
        u = rng.normal(size=(1, 1, L, D))
        delta = rng.uniform(0.01, 0.1, size=(1, 1, L, D))
        Bm = rng.normal(size=(1, 1, L, N))
        Cm = rng.normal(size=(1, 1, L, N))
        x = u[0, 0]
        for method in methods:
            if method.startswith("scan-"):
                kern = get_kernels(method[len("scan-"):])
                fn = lambda k=kern: k.scan_forward(u, delta, A, Bm, Cm)
                nbytes = 8 * (2 * L * D + 2 * L * N + 2 * L * D * N)
            elif method == "attention":
                fn = lambda: attention(x, wq, wk, wv)
                nbytes = 8 * (4 * L * D + 2 * L * L)
            else:
                raise ValueError(f"unknown bench method {method!r}")
            mean_s, min_s, r = _time(fn, reps)
            records.append(BenchRecord(method, L, mean_s, min_s, r, nbytes))
    slopes = {}
    for method in methods:
        recs = [r for r in records if r.method == method]
        slopes[method] = fit_slope([r.length for r in recs], [r.min_s for r in recs])
    return records, slopes


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    variant: str
    runs: List[Dict[str, float]]

    def stat(self, key: str) -> Tuple[float, float]:
        vals = np.asarray([r[key] for r in self.runs if not math.isnan(r[key])])
        if vals.size == 0:
            return float("nan"), float("nan")
        return float(vals.mean()), float(vals.std())


def ablate(variants: Sequence[str], train_set, val_set, test_set, seeds: Sequence[int],
           model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None) -> List[AblationRow]:
    """Train every (variant, seed) pair with the same budget and evaluate on ``test_set``."""
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    rows = []
    for variant in variants:
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        runs = []
        for seed in seeds:
            mcfg = ablation_variant(model_cfg, variant)
            mcfg.seed = seed
            tcfg = TrainConfig(**{**train_cfg.__dict__, "seed": seed})
            model = HyMUNet(mcfg)
            best, _ = train(model, train_set, val_set, tcfg)
            model.load_state_dict(best)
            agg = evaluate(model, test_set, tcfg.threshold).aggregate()
            runs.append({"seed": seed, "dsc": agg["dsc_mean"], "iou": agg["iou_mean"],
                         "hd95": agg["hd95_mean"], "precision": agg["precision_mean"]})
            log.info("ablate %s seed=%d dsc=%.4f", variant, seed, agg["dsc_mean"])
        rows.append(AblationRow(variant, runs))
    return rows


def ablation_table(rows: Sequence[AblationRow]) -> str:
    lines = ["variant\tIoU\tDSC\tHD95_px\tPRE\truns"]
    for r in rows:
        cells = [f"{m:.4f}+-{s:.4f}" for m, s in (r.stat(k) for k in ("iou", "dsc", "hd95", "precision"))]
        lines.append("\t".join([r.variant] + cells + [str(len(r.runs))]))
    return "\n".join(lines) + "\n"


def ablation_keyvalue(rows: Sequence[AblationRow]) -> str:
    out = []
    for r in rows:
        for k in ("iou", "dsc", "hd95", "precision"):
            m, s = r.stat(k)
            out.append(f"{r.variant}.{k}_mean = {m:.6f}\n{r.variant}.{k}_std = {s:.6f}\n")
    return "".join(out)
