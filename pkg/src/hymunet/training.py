"""AdamW, cosine schedule, the epoch loop and evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff.tensor import Tensor, no_grad
from .data import Sample, augment, to_arrays
from .losses import LossWeights, batch_loss
from .metrics import MetricReport, binarize
from .model import HyMUNet, save_checkpoint
from .nn.module import Module

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    lr_min: float = 1e-6
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    eval_every: int = 1
    augment: bool = True
    clip_grad_norm: float = 0.0
    threshold: float = 0.5
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if not 0 < self.lr_min <= self.lr0:
            raise ValueError(f"need 0 < lr_min <= lr0, got lr_min={self.lr_min} lr0={self.lr0}")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1 and epochs >= 0")


class AdamW:
    """Adam with bias correction and decoupled weight decay ``p -= lr*wd*p``."""

    def __init__(self, params: Sequence[Tensor], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float, grads: Optional[Sequence[np.ndarray]] = None) -> None:
        grads = [p.grad for p in self.params] if grads is None else list(grads)
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
        self.t += 1
        adamw_step(self.params, grads, self.m, self.v, self.t, lr, self.beta1, self.beta2,
                   self.eps, self.weight_decay)


def adamw_step(params, grads, m, v, t: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One in-place AdamW update of ``params`` (Tensors) with moment buffers ``m``, ``v``."""
    if t < 1:
        raise ValueError("adamw step count starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, mi, vi in zip(params, grads, m, v):
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        mi *= beta1
        mi += (1.0 - beta1) * g
        vi *= beta2
        vi += (1.0 - beta2) * g * g
        p.data -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)


def cosine_lr(t: float, total: float, lr0: float = 1e-4, lr_min: float = 1e-6) -> float:
    """``lr_min + (lr0 - lr_min) * (1 + cos(pi * t / total)) / 2`` for t in [0, total]."""
    if total <= 0:
        return lr0
    t = min(max(t, 0.0), total)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / total))


@dataclass
class TrainLog:
    records: List[Dict[str, float]] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def append(self, record: Dict[str, float]) -> None:
        self.records.append(dict(record))

    def reproducible(self) -> List[Dict[str, float]]:
        """Records without wall-clock fields; fixed by (seed, config, data)."""
        return [{k: v for k, v in r.items() if k != "wall_time"} for r in self.records]

    def to_text(self, wall_time: bool = False) -> str:
        """One ``key=value`` line per epoch; wall-clock fields only when asked for."""
        rows = self.records if wall_time else self.reproducible()
        lines = [" ".join(f"{k}={_kv(v)}" for k, v in r.items()) for r in rows]
        lines += [f"note={n!r}" for n in self.notes]
        return "".join(line + "\n" for line in lines)

    def write(self, path) -> None:
        """Write the reproducible log to ``path`` and per-epoch timings next to it.

        Timings go to a sibling ``<stem>.timing.txt`` so the main log is a pure
        function of seed, config and data and can be compared byte for byte.
        """
        path = Path(path)
        path.write_text(self.to_text())
        times = "".join(f"epoch={r.get('epoch', i)} wall_time={_kv(r['wall_time'])}\n"
                        for i, r in enumerate(self.records) if "wall_time" in r)
        path.with_name(path.stem + ".timing.txt").write_text(times)

    def best(self, key: str = "val_dsc") -> Tuple[int, float]:
        vals = [(r[key], -i) for i, r in enumerate(self.records) if key in r and not math.isnan(r[key])]
        if not vals:
            return -1, float("nan")
        v, neg_i = max(vals)
        return -neg_i, v


def _kv(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def predict_proba(model, x: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Eval-mode probabilities for (B, 3, H, W) images; ``model`` may be any callable."""
    if isinstance(model, Module):
        was_training = model.training
        model.eval()
        try:
            with no_grad():
                outs = [model(Tensor(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)]
        finally:
            model.train(was_training)
        probs = np.concatenate(outs) if outs else np.zeros((0, 1) + x.shape[2:])
    else:
        out = model(x)
        probs = np.asarray(out.data if isinstance(out, Tensor) else out, dtype=np.float64)
    if not np.all(np.isfinite(probs)):
        raise FloatingPointError("non-finite prediction (check batch-norm running statistics)")
    return probs


def evaluate(model, dataset: Sequence[Sample], threshold: float = 0.5, batch_size: int = 16) -> MetricReport:
    report = MetricReport()
    if not dataset:
        return report
    x, _ = to_arrays(dataset)
    probs = predict_proba(model, x, batch_size)
    for s, p in zip(dataset, probs):
        report.add(s.id, binarize(p[0], threshold), s.mask)
    return report


def _clip(params, max_norm: float) -> None:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale


def train(model: HyMUNet, train_set: Sequence[Sample], val_set: Sequence[Sample], cfg: TrainConfig,
          ckpt_path=None, log_path=None, on_epoch: Optional[Callable[[Dict], None]] = None):
    """Fit ``model``; returns (best state dict, TrainLog).

    The state with the highest validation mean DSC is kept (ties go to the
    earlier epoch) and written to ``ckpt_path`` when given. A non-finite loss
    stops training; the best state so far is returned.
    """
    ids_train = {s.id for s in train_set}
    if ids_train & {s.id for s in val_set}:
        raise ValueError("train and validation sets overlap")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    tlog = TrainLog()
    best_state = model.state_dict()
    best_dsc = -math.inf
    n = len(train_set)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0, cfg.lr_min)
        model.train()
        order = rng.permutation(n)
        sums = {"loss": 0.0, "dice": 0.0, "bce": 0.0, "edge": 0.0}
        halted = False
        for start in range(0, n, cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            if cfg.augment:
                batch = [augment(s, rng) for s in batch]
            x, y = to_arrays(batch)
            model.zero_grad()
            parts: Dict[str, float] = {}
            loss = batch_loss(model(Tensor(x)), y, cfg.loss, parts)
            if not math.isfinite(loss.item()):
                tlog.notes.append(f"non-finite loss at epoch {epoch}; halted")
                halted = True
                break
            loss.backward()
            params = opt.params
            if cfg.clip_grad_norm > 0:
                _clip(params, cfg.clip_grad_norm)
            try:
                opt.step(lr)
            except FloatingPointError as e:
                tlog.notes.append(f"{e} at epoch {epoch}; halted")
                halted = True
                break
            w = len(batch) / n
            sums["loss"] += loss.item() * w
            for k in ("dice", "bce", "edge"):
                sums[k] += parts[k] * w
        if halted:
            log.warning(tlog.notes[-1])
            break

        record = {"epoch": epoch, "lr": lr, "train_loss": sums["loss"], "train_dice": sums["dice"],
                  "train_bce": sums["bce"], "train_edge": sums["edge"]}
        if val_set and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            try:
                agg = evaluate(model, val_set, cfg.threshold).aggregate()
            except FloatingPointError as e:
                tlog.notes.append(f"{e} at epoch {epoch}; halted")
                log.warning(tlog.notes[-1])
                break
            record.update(val_dsc=agg["dsc_mean"], val_iou=agg["iou_mean"],
                          val_hd95=agg["hd95_mean"], val_pre=agg["precision_mean"])
            if agg["dsc_mean"] > best_dsc:
                best_dsc = agg["dsc_mean"]
                best_state = model.state_dict()
                if ckpt_path is not None:
                    save_checkpoint(model, ckpt_path, extra={"epoch": epoch, "val_dsc": best_dsc})
        record["wall_time"] = time.perf_counter() - t0
        tlog.append(record)
        log.info("epoch %d lr=%.3g loss=%.4f val_dsc=%s", epoch, lr, record["train_loss"],
                 record.get("val_dsc", "-"))
        if on_epoch is not None:
            on_epoch(record)
        if log_path is not None:
            tlog.write(log_path)

    if not val_set and cfg.epochs > 0 and not tlog.notes:
        best_state = model.state_dict()
    if log_path is not None:
        tlog.write(log_path)
    return best_state, tlog
