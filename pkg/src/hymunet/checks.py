"""Randomized gradient-check cases for every op kind and for the full model."""

from __future__ import annotations

from typing import Callable, Dict, List, Tuple

import numpy as np

from .autodiff import nnops
from .autodiff import tensor as T
from .autodiff.gradcheck import grad_check
from .autodiff.tensor import Tensor
from .losses import LossWeights, total_loss
from .model import HyMUNet, ModelConfig
from .ssm.scan import selective_scan

Case = Tuple[Callable[..., Tensor], List[Tensor]]


def _shape(rng, ndim_lo=1, ndim_hi=3, lo=1, hi=4):
    return tuple(int(n) for n in rng.integers(lo, hi + 1, size=int(rng.integers(ndim_lo, ndim_hi + 1))))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _project(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * w).sum()


def _unary(fn, sampler):
    def build(rng) -> Case:
        shape = _shape(rng)
        w = rng.normal(size=shape)
        return (lambda a: _project(fn(a), w)), [Tensor(sampler(rng, shape))]
    return build


def _binary(fn, positive_rhs=False):
    def build(rng) -> Case:
        shape = _shape(rng)
        # broadcast the rhs along a random subset of axes
        rshape = tuple(1 if rng.random() < 0.3 else n for n in shape)
        w = rng.normal(size=shape)
        b = _away_from_zero(rng, rshape, 0.5) if positive_rhs else rng.normal(size=rshape)
        return (lambda a, c: _project(fn(a, c), w)), [Tensor(rng.normal(size=shape)), Tensor(b)]
    return build


def _normal(rng, shape):
    return rng.normal(size=shape)


def _matmul(rng) -> Case:
    batch = _shape(rng, 0, 2)
    m, k, n = (int(v) for v in rng.integers(1, 5, size=3))
    a_shape = batch + (m, k)
    b_shape = (batch[-1:] if batch and rng.random() < 0.5 else ()) + (k, n)
    out_shape = np.broadcast_shapes(a_shape[:-2], b_shape[:-2]) + (m, n)
    w = rng.normal(size=out_shape)
    return (lambda a, b: _project(T.matmul(a, b), w)), [Tensor(rng.normal(size=a_shape)), Tensor(rng.normal(size=b_shape))]


def _reduce(kind):
    def build(rng) -> Case:
        shape = _shape(rng, 1, 4)
        axis = int(rng.integers(0, len(shape)))
        keep = bool(rng.random() < 0.5)
        fn = T.tsum if kind == "sum" else T.mean
        out_shape = np.sum(np.zeros(shape), axis=axis, keepdims=keep).shape
        w = rng.normal(size=out_shape)
        return (lambda a: _project(fn(a, axis=axis, keepdims=keep), w)), [Tensor(rng.normal(size=shape))]
    return build


def _reshape(rng) -> Case:
    shape = _shape(rng, 2, 4)
    new = (int(np.prod(shape[:2])),) + shape[2:]
    w = rng.normal(size=new)
    return (lambda a: _project(T.reshape(a, new), w)), [Tensor(rng.normal(size=shape))]


def _transpose(rng) -> Case:
    shape = _shape(rng, 2, 4)
    axes = tuple(int(a) for a in rng.permutation(len(shape)))
    w = rng.normal(size=tuple(shape[a] for a in axes))
    return (lambda a: _project(T.transpose(a, axes), w)), [Tensor(rng.normal(size=shape))]


def _concat(rng) -> Case:
    shape = _shape(rng, 1, 3)
    axis = int(rng.integers(0, len(shape)))
    other = list(shape)
    other[axis] = int(rng.integers(1, 4))
    out = list(shape)
    out[axis] += other[axis]
    w = rng.normal(size=out)
    return (lambda a, b: _project(T.concat([a, b], axis=axis), w)), [Tensor(rng.normal(size=shape)), Tensor(rng.normal(size=other))]


def _getitem(rng) -> Case:
    shape = _shape(rng, 1, 3, 2, 5)
    idx = tuple(slice(int(rng.integers(0, n // 2 + 1)), None) for n in shape)
    w = rng.normal(size=np.zeros(shape)[idx].shape)
    return (lambda a: _project(a[idx], w)), [Tensor(rng.normal(size=shape))]


def _take(rng) -> Case:
    shape = _shape(rng, 1, 3, 2, 5)
    axis = int(rng.integers(0, len(shape)))
    n = shape[axis]
    idx = rng.permutation(n) if rng.random() < 0.5 else rng.integers(0, n, size=int(rng.integers(1, 2 * n + 1)))
    out = list(shape)
    out[axis] = len(idx)
    w = rng.normal(size=out)
    return (lambda a: _project(T.take(a, idx, axis), w)), [Tensor(rng.normal(size=shape))]


def _where(rng) -> Case:
    shape = _shape(rng)
    cond = rng.random(shape) < 0.5
    w = rng.normal(size=shape)
    return (lambda a, b: _project(T.where(cond, a, b), w)), [Tensor(rng.normal(size=shape)), Tensor(rng.normal(size=shape))]


def _conv2d(rng) -> Case:
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    pad = k // 2
    B, C, O = (int(v) for v in rng.integers(1, 4, size=3))
    H, W = (int(v) for v in rng.integers(3, 7, size=2))
    x = rng.normal(size=(B, C, H, W))
    wt = rng.normal(size=(O, C, k, k))
    b = rng.normal(size=O)
    Ho, Wo = (H + 2 * pad - k) // stride + 1, (W + 2 * pad - k) // stride + 1
    w = rng.normal(size=(B, O, Ho, Wo))
    return (lambda a, c, d: _project(nnops.conv2d(a, c, d, stride=stride, padding=pad), w)), [Tensor(x), Tensor(wt), Tensor(b)]


def _batch_norm(mode):
    def build(rng) -> Case:
        B, C, H, W = (int(v) for v in rng.integers(2, 4, size=4))
        x = rng.normal(size=(B, C, H, W)) * 2 + 1
        w = rng.normal(size=x.shape)
        rm, rv = rng.normal(size=C), rng.uniform(0.5, 2.0, size=C)

        def f(a, g, b):
            return _project(nnops.batch_norm(a, g, b, rm.copy(), rv.copy(), training=(mode == "train"),
                                             per_instance=(mode == "instance")), w)
        return f, [Tensor(x), Tensor(rng.uniform(0.5, 1.5, size=C)), Tensor(rng.normal(size=C))]
    return build


def _upsample(rng) -> Case:
    shape = _shape(rng, 2, 4, 1, 4)
    f = int(rng.choice([2, 4]))
    out = shape[:-2] + (shape[-2] * f, shape[-1] * f)
    w = rng.normal(size=out)
    return (lambda a: _project(nnops.upsample_bilinear(a, f), w)), [Tensor(rng.normal(size=shape))]


def _resize(rng) -> Case:
    shape = _shape(rng, 2, 3, 2, 6)
    oh, ow = (int(v) for v in rng.integers(1, 9, size=2))
    w = rng.normal(size=shape[:-2] + (oh, ow))
    return (lambda a: _project(nnops.resize_bilinear(a, oh, ow), w)), [Tensor(rng.normal(size=shape))]


def _dwconv1d(rng) -> Case:
    lead = _shape(rng, 0, 2)
    L, C = (int(v) for v in rng.integers(1, 6, size=2))
    k = int(rng.choice([1, 3, 5]))
    w = rng.normal(size=lead + (L, C))
    return (lambda a, b, c: _project(nnops.depthwise_conv1d(a, b, c), w)), [
        Tensor(rng.normal(size=lead + (L, C))), Tensor(rng.normal(size=(C, k))), Tensor(rng.normal(size=C))]


def _scan(rng) -> Case:
    K = int(rng.integers(1, 3))
    B, L, D, N = (int(v) for v in rng.integers(1, 6, size=4))
    w = rng.normal(size=(K, B, L, D))
    return (lambda u, d, a, b, c: _project(selective_scan(u, d, a, b, c), w)), [
        Tensor(rng.normal(size=(K, B, L, D))), Tensor(rng.uniform(0.05, 1.0, size=(K, B, L, D))),
        Tensor(-rng.uniform(0.3, 2.0, size=(K, D, N))), Tensor(rng.normal(size=(K, B, L, N))),
        Tensor(rng.normal(size=(K, B, L, N)))]


OP_CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, positive_rhs=True),
    "neg": _unary(T.neg, _normal),
    "pow": _unary(lambda a: T.power(a, 3.0), _normal),
    "exp": _unary(T.exp, _normal),
    "log": _unary(T.log, lambda r, s: r.uniform(0.2, 3.0, size=s)),
    "sigmoid": _unary(T.sigmoid, _normal),
    "relu": _unary(T.relu, _away_from_zero),
    "silu": _unary(T.silu, _normal),
    "softplus": _unary(T.softplus, _normal),
    "clamp": _unary(lambda a: T.clamp(a, -0.7, 0.7), lambda r, s: np.where(
        r.random(s) < 0.5, r.uniform(-0.6, 0.6, size=s), _away_from_zero(r, s, 0.8))),
    "matmul": _matmul,
    "sum": _reduce("sum"),
    "mean": _reduce("mean"),
    "reshape": _reshape,
    "transpose": _transpose,
    "concat": _concat,
    "getitem": _getitem,
    "take": _take,
    "where": _where,
    "conv2d": _conv2d,
    "batch_norm_train": _batch_norm("train"),
    "batch_norm_eval": _batch_norm("eval"),
    "instance_norm": _batch_norm("instance"),
    "upsample_bilinear": _upsample,
    "resize_bilinear": _resize,
    "depthwise_conv1d": _dwconv1d,
    "selective_scan": _scan,
}


def check_op(kind: str, trials: int = 20, seed: int = 0, step: float = 1e-5) -> float:
    """Worst relative error over ``trials`` random shapes for one op kind."""
    rng = np.random.default_rng([seed, sorted(OP_CASES).index(kind)])
    worst = 0.0
    for _ in range(trials):
        f, inputs = OP_CASES[kind](rng)
        worst = max(worst, grad_check(f, inputs, step))
    return worst


def model_grad_check(size: int = 32, seed: int = 0, param_entries: int = 3,
                     input_entries: int | None = None, step: float = 1e-5,
                     jitter: float = 0.1) -> float:
    """Finite-difference check of total loss through the full model.

    Checks the input image (all entries unless ``input_entries`` is set) and
    ``param_entries`` random entries of every learnable tensor, in training mode.

    Constant-initialized tensors (zero biases, unit BN scales) are jittered
    first. At 32x32 the deepest stage is 1x1 with batch 1, so its batch norm
    outputs exactly ``beta``; with ``beta = 0`` and zero gate biases the
    downstream ReLUs then sit exactly on their kink, where finite differences
    and any subgradient disagree by construction.
    """
    rng = np.random.default_rng(seed)
    model = HyMUNet(ModelConfig(input_size=size, seed=seed))
    for p in model.parameters():
        if p.size and np.ptp(p.data) == 0:
            p.data = p.data + rng.normal(scale=jitter, size=p.shape)
    x = Tensor(rng.normal(size=(1, 3, size, size)))
    yy, xx = np.mgrid[0:size, 0:size]
    y = (((yy - size / 2) ** 2 + (xx - size / 3) ** 2) < (size / 4) ** 2).astype(np.float64)[None, None]
    w = LossWeights()
    params = model.parameters()
    limits = [input_entries] + [param_entries] * len(params)

    def f(xi, *ps):
        return total_loss(model(xi), y, w)

    return grad_check(f, [x] + params, step, max_entries=limits, seed=seed)
