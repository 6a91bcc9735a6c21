import math
import os
import subprocess
import sys

import numpy as np
import pytest

from hymunet.autodiff import Tensor, grad_check
from hymunet.ssm import BACKENDS, SsmParams, init_A_log, scan_recurrence, selective_scan, zoh_discretize
from hymunet.ssm.scan import get_kernels

from oracles import unrolled_scan as unrolled


def random_instance(rng, L, D, N):
    return (rng.normal(size=(L, D)), rng.uniform(0.01, 1.0, size=(L, D)), -rng.uniform(0.2, 3.0, size=(D, N)),
            rng.normal(size=(L, N)), rng.normal(size=(L, N)))


def test_zoh_closed_form():
    Ab, Bb = zoh_discretize([-1.0], [1.0], math.log(2))
    assert abs(Ab[0] - 0.5) <= 1e-15 and abs(Bb[0] - 0.5) <= 1e-15


def test_zoh_elementwise():
    Ab, Bb = zoh_discretize([-2.0, -0.5], [1.0, 1.0], 1.0)
    assert np.allclose(Ab, [math.exp(-2), math.exp(-0.5)], rtol=1e-15)
    assert np.allclose(Bb, [(1 - math.exp(-2)) / 2, (1 - math.exp(-0.5)) / 0.5], rtol=1e-15)


def test_zoh_small_delta_limit():
    Ab, Bb = zoh_discretize([-1.0, -3.0], [2.0, 5.0], 1e-14)
    assert np.allclose(Ab, 1.0)
    assert np.allclose(Bb, [2e-14, 5e-14], rtol=1e-10)


def test_zoh_singular_A_uses_limit():
    _, Bb = zoh_discretize([0.0, 1e-13], [3.0, 3.0], 0.5)
    assert np.array_equal(Bb, [1.5, 1.5])


def test_zoh_rejects_nonpositive_delta():
    with pytest.raises(ValueError):
        zoh_discretize([-1.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        zoh_discretize([-1.0], [1.0], [0.1, -0.1])


def test_recurrence_without_memory():
    rng = np.random.default_rng(0)
    x, Bb, C = rng.normal(size=(5, 2)), rng.normal(size=(5, 2, 3)), rng.normal(size=(5, 3))
    y, _ = scan_recurrence(np.zeros((5, 2, 3)), Bb, x, C)
    assert np.allclose(y, np.einsum("tdn,td,tn->td", Bb, x, C))


def test_recurrence_accumulator_gives_prefix_sums():
    x = np.arange(1.0, 7.0)[:, None]
    y, _ = scan_recurrence(np.ones((6, 1, 1)), np.ones((6, 1, 1)), x, np.ones((6, 1)))
    assert np.array_equal(y[:, 0], np.cumsum(x[:, 0]))


def test_recurrence_empty_sequence():
    y, hs = scan_recurrence(np.ones((0, 2, 3)), np.ones((0, 2, 3)), np.zeros((0, 2)), np.ones((0, 3)))
    assert y.shape == (0, 2)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_selective_scan_matches_unrolled_oracle(backend):
    rng = np.random.default_rng(1)
    for _ in range(25):
        L, D, N = int(rng.integers(1, 65)), int(rng.integers(1, 4)), int(rng.integers(1, 9))
        u, delta, A, Bm, Cm = random_instance(rng, L, D, N)
        y = selective_scan(u[None], delta[None], A, Bm[None], Cm[None], backend=backend).data[0]
        assert np.max(np.abs(y - unrolled(u, delta, A, Bm, Cm))) < 1e-12


def test_selective_scan_l16_against_oracle():
    rng = np.random.default_rng(2)
    u, delta, A, Bm, Cm = random_instance(rng, 16, 2, 4)
    y = selective_scan(u[None], delta[None], A, Bm[None], Cm[None]).data[0]
    assert np.max(np.abs(y - unrolled(u, delta, A, Bm, Cm))) < 1e-12


def test_selective_scan_nan_input_errors():
    u = np.zeros((1, 4, 2))
    u[0, 1, 0] = np.nan
    with pytest.raises(FloatingPointError):
        selective_scan(u, np.ones((1, 4, 2)), -np.ones((2, 3)), np.ones((1, 4, 3)), np.ones((1, 4, 3)))


def test_selective_scan_shape_mismatch():
    with pytest.raises(ValueError):
        selective_scan(np.zeros((1, 4, 2)), np.ones((1, 4, 2)), -np.ones((3, 3)), np.ones((1, 4, 3)),
                       np.ones((1, 4, 3)))
    with pytest.raises(ValueError):
        selective_scan(np.zeros((1, 4, 2)), np.ones((1, 5, 2)), -np.ones((2, 3)), np.ones((1, 4, 3)),
                       np.ones((1, 4, 3)))


def test_empty_sequence_scan():
    y = selective_scan(np.zeros((1, 0, 2)), np.ones((1, 0, 2)), -np.ones((2, 3)), np.ones((1, 0, 3)),
                       np.ones((1, 0, 3)))
    assert y.shape == (1, 0, 2)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_scan_backward_zero_upstream(backend):
    rng = np.random.default_rng(3)
    shape = (2, 1, 6, 3)
    u, delta = rng.normal(size=shape), rng.uniform(0.1, 1, size=shape)
    A = -rng.uniform(0.5, 2, size=(2, 3, 4))
    Bm, Cm = rng.normal(size=(2, 1, 6, 4)), rng.normal(size=(2, 1, 6, 4))
    k = get_kernels(backend)
    _, hs = k.scan_forward(u, delta, A, Bm, Cm)
    for g in k.scan_backward(u, delta, A, Bm, Cm, hs, np.zeros(shape)):
        assert not np.any(np.asarray(g))


def test_scan_backward_single_step_closed_form():
    # y = C * (expm1(d a)/a) * B * u, one channel, one state
    u, d, a, b, c = 0.7, 0.3, -1.3, 0.9, -1.1
    ut, dt, at, bt, ct = (Tensor(np.full(s, v), requires_grad=True) for v, s in
                          ((u, (1, 1, 1)), (d, (1, 1, 1)), (a, (1, 1)), (b, (1, 1, 1)), (c, (1, 1, 1))))
    selective_scan(ut, dt, at, bt, ct).sum().backward()
    e = math.exp(d * a)
    bb = math.expm1(d * a) / a
    assert np.isclose(ut.grad.item(), c * bb * b, rtol=1e-13)
    assert np.isclose(bt.grad.item(), c * bb * u, rtol=1e-13)
    assert np.isclose(ct.grad.item(), bb * b * u, rtol=1e-13)
    assert np.isclose(dt.grad.item(), c * e * b * u, rtol=1e-13)
    assert np.isclose(at.grad.item(), c * b * u * (d * e * a - math.expm1(d * a)) / a ** 2, rtol=1e-12)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_scan_gradcheck_l8_n3(backend):
    rng = np.random.default_rng(4)
    K, B, L, D, N = 2, 1, 8, 2, 3
    w = rng.normal(size=(K, B, L, D))
    ins = [Tensor(rng.normal(size=(K, B, L, D))), Tensor(rng.uniform(0.05, 1, size=(K, B, L, D))),
           Tensor(-rng.uniform(0.3, 2, size=(K, D, N))), Tensor(rng.normal(size=(K, B, L, N))),
           Tensor(rng.normal(size=(K, B, L, N)))]
    assert grad_check(lambda *a: (selective_scan(*a, backend=backend) * w).sum(), ins) < 1e-6


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
def test_backends_agree():
    rng = np.random.default_rng(5)
    shape = (4, 2, 33, 5)
    args = (rng.normal(size=shape), rng.uniform(0.01, 0.5, size=shape), -rng.uniform(0.5, 4, size=(4, 5, 6)),
            rng.normal(size=(4, 2, 33, 6)), rng.normal(size=(4, 2, 33, 6)))
    yc, hc = get_kernels("compiled").scan_forward(*args)
    yp, hp = get_kernels("python").scan_forward(*args)
    assert np.allclose(yc, yp, atol=1e-13, rtol=0)
    dy = rng.normal(size=shape)
    for gc, gp in zip(get_kernels("compiled").scan_backward(*args, np.asarray(hc), dy),
                      get_kernels("python").scan_backward(*args, hp, dy)):
        assert np.allclose(gc, gp, atol=1e-12, rtol=0)


def test_pure_python_env_selects_fallback():
    code = "from hymunet.ssm.scan import DEFAULT_BACKEND, BACKENDS; print(DEFAULT_BACKEND, sorted(BACKENDS))"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, "HYMUNET_PURE_PYTHON": "1"},
                         capture_output=True, text=True, check=True).stdout
    assert out.split()[0] == "python" and "compiled" not in out


def test_unknown_backend():
    with pytest.raises(ValueError, match="unavailable"):
        get_kernels("fortran")


def test_A_init_and_negativity():
    a = init_A_log(2, 3, 4)
    assert np.allclose(-np.exp(a[1, 2]), [-1, -2, -3, -4])
    p = SsmParams(3, 4, np.random.default_rng(0), directions=2)
    assert np.all(p.A().data < 0)


def test_initial_delta_range():
    p = SsmParams(8, 4, np.random.default_rng(0), directions=4)
    dt = np.log1p(np.exp(p.dt_bias.data))
    assert dt.min() >= 0.01 - 1e-12 and dt.max() <= 0.1 + 1e-12


@pytest.mark.parametrize("selective", [True, False])
def test_ssm_params_gradcheck(selective):
    rng = np.random.default_rng(6)
    p = SsmParams(3, 2, rng, directions=2, selective=selective)
    u = Tensor(rng.normal(size=(2, 1, 5, 3)))
    w = rng.normal(size=(2, 1, 5, 3))
    params = p.parameters()
    assert grad_check(lambda a, *ps: (p(a) * w).sum(), [u] + params) < 1e-6
