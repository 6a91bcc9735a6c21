"""Independent reference implementations used by several test modules."""

import math

import numpy as np


def unrolled_scan(u, delta, A, Bm, Cm):
    """Scalar-loop oracle for one sequence: u, delta (L, D); A (D, N); Bm, Cm (L, N)."""
    L, D = u.shape
    N = A.shape[1]
    y = np.zeros((L, D))
    for d in range(D):
        h = [0.0] * N
        for t in range(L):
            acc = 0.0
            for n in range(N):
                a = A[d, n]
                dt = delta[t, d]
                abar = math.exp(dt * a)
                bbar = math.expm1(dt * a) / a * Bm[t, n]
                h[n] = abar * h[n] + bbar * u[t, d]
                acc += Cm[t, n] * h[n]
            y[t, d] = acc
    return y


def boundary_pixels(mask):
    """Foreground pixels with at least one 4-neighbour that is background or off-grid."""
    H, W = mask.shape
    out = []
    for r in range(H):
        for c in range(W):
            if not mask[r, c]:
                continue
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < H and 0 <= cc < W) or not mask[rr, cc]:
                    out.append((r, c))
                    break
    return out


def percentile_linear(values, q):
    """Inclusive linear-interpolation percentile written out by hand."""
    v = sorted(values)
    pos = (len(v) - 1) * q / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def hd95_all_pairs(P, G, q=95.0):
    bp, bg = boundary_pixels(P), boundary_pixels(G)

    def directed(src, dst):
        return [min(math.hypot(a[0] - b[0], a[1] - b[1]) for b in dst) for a in src]

    return max(percentile_linear(directed(bp, bg), q), percentile_linear(directed(bg, bp), q))


def morph(mask, radius, op):
    """Square-window dilation (op=any) or erosion (op=all); off-grid pixels are background."""
    H, W = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for r in range(H):
        for c in range(W):
            vals = []
            for dr in range(-radius, radius + 1):
                for dc in range(-radius, radius + 1):
                    rr, cc = r + dr, c + dc
                    vals.append(bool(mask[rr, cc]) if 0 <= rr < H and 0 <= cc < W else False)
            out[r, c] = op(vals)
    return out


def random_blob(rng, size=32):
    """Union of 1-3 random ellipses; never empty."""
    yy, xx = np.mgrid[0:size, 0:size]
    m = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(4, size - 4, size=2)
        ry, rx = rng.uniform(2, size / 3, size=2)
        m |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
    if not m.any():
        m[size // 2, size // 2] = True
    return m
