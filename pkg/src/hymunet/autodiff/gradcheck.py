"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
               max_entries: Union[None, int, Sequence[Optional[int]]] = None, seed: int = 0) -> float:
    """Compare analytic gradients of scalar ``f(*inputs)`` with central differences.

    Returns the max over checked entries of
    ``|analytic - numeric| / max(1, |analytic|)``. With ``max_entries`` set
    (one int, or one per input), at most that many randomly chosen entries
    of an input are probed.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    for t in inputs:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    out = f(*inputs)
    if out.size != 1:
        raise ValueError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise FloatingPointError("grad_check: f returned a non-finite value")
    if out.requires_grad:
        out.backward()
    analytic = [t.grad.copy() for t in inputs]

    if max_entries is None or isinstance(max_entries, int):
        max_entries = [max_entries] * len(inputs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, ga, limit in zip(inputs, analytic, max_entries):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if limit is not None and flat.size > limit:
                idx = rng.choice(flat.size, size=limit, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                fp = f(*inputs).item()
                flat[i] = orig - step
                fm = f(*inputs).item()
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise FloatingPointError("grad_check: f returned a non-finite value")
                num = (fp - fm) / (2.0 * step)
                a = ga.reshape(-1)[i]
                worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst
