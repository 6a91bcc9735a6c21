# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selective-scan kernels; same layout and results as ``_scan_py``."""

import numpy as np
from libc.math cimport exp, expm1, fabs

cdef double SINGULAR_EPS = 1e-12


def scan_forward(const double[:, :, :, ::1] u, const double[:, :, :, ::1] delta,
                 const double[:, :, ::1] A, const double[:, :, :, ::1] Bm,
                 const double[:, :, :, ::1] Cm):
    cdef Py_ssize_t K = u.shape[0], Bsz = u.shape[1], L = u.shape[2], D = u.shape[3]
    cdef Py_ssize_t N = A.shape[2]
    y_arr = np.empty((K, Bsz, L, D))
    hs_arr = np.empty((K, Bsz, L, D, N))
    cdef double[:, :, :, ::1] y = y_arr
    cdef double[:, :, :, :, ::1] hs = hs_arr
    h_arr = np.zeros(N)
    cdef double[::1] h = h_arr
    cdef Py_ssize_t k, b, t, d, n
    cdef double dt, a, an, abar, coef, ut, acc
    with nogil:
        for k in range(K):
            for b in range(Bsz):
                for d in range(D):
                    for n in range(N):
                        h[n] = 0.0
                    for t in range(L):
                        dt = delta[k, b, t, d]
                        ut = u[k, b, t, d]
                        acc = 0.0
                        for n in range(N):
                            an = A[k, d, n]
                            abar = exp(dt * an)
                            if fabs(an) < SINGULAR_EPS:
                                coef = dt
                            else:
                                coef = expm1(dt * an) / an
                            h[n] = abar * h[n] + coef * Bm[k, b, t, n] * ut
                            hs[k, b, t, d, n] = h[n]
                            acc = acc + Cm[k, b, t, n] * h[n]
                        y[k, b, t, d] = acc
    return y_arr, hs_arr


def scan_backward(const double[:, :, :, ::1] u, const double[:, :, :, ::1] delta,
                  const double[:, :, ::1] A, const double[:, :, :, ::1] Bm,
                  const double[:, :, :, ::1] Cm, const double[:, :, :, :, ::1] hs,
                  const double[:, :, :, ::1] dy):
    cdef Py_ssize_t K = u.shape[0], Bsz = u.shape[1], L = u.shape[2], D = u.shape[3]
    cdef Py_ssize_t N = A.shape[2]
    du_arr = np.zeros((K, Bsz, L, D))
    ddelta_arr = np.zeros((K, Bsz, L, D))
    dA_arr = np.zeros((K, D, N))
    dB_arr = np.zeros((K, Bsz, L, N))
    dC_arr = np.zeros((K, Bsz, L, N))
    cdef double[:, :, :, ::1] du = du_arr
    cdef double[:, :, :, ::1] ddelta = ddelta_arr
    cdef double[:, :, ::1] dA = dA_arr
    cdef double[:, :, :, ::1] dB = dB_arr
    cdef double[:, :, :, ::1] dC = dC_arr
    carry_arr = np.zeros(N)
    cdef double[::1] carry = carry_arr
    cdef Py_ssize_t k, b, t, d, n
    cdef double dt, an, abar, coef, ut, gy, gh, hprev, g_abar, g_bbar, g_coef, bt
    cdef double acc_du, acc_dd, dcoef_dA, dcoef_dd
    with nogil:
        for k in range(K):
            for b in range(Bsz):
                for d in range(D):
                    for n in range(N):
                        carry[n] = 0.0
                    for t in range(L - 1, -1, -1):
                        dt = delta[k, b, t, d]
                        ut = u[k, b, t, d]
                        gy = dy[k, b, t, d]
                        acc_du = 0.0
                        acc_dd = 0.0
                        for n in range(N):
                            an = A[k, d, n]
                            bt = Bm[k, b, t, n]
                            abar = exp(dt * an)
                            if fabs(an) < SINGULAR_EPS:
                                coef = dt
                                dcoef_dd = 1.0
                                dcoef_dA = 0.5 * dt * dt
                            else:
                                coef = expm1(dt * an) / an
                                dcoef_dd = abar
                                dcoef_dA = (dt * abar * an - expm1(dt * an)) / (an * an)
                            gh = gy * Cm[k, b, t, n] + carry[n]
                            dC[k, b, t, n] += gy * hs[k, b, t, d, n]
                            if t > 0:
                                hprev = hs[k, b, t - 1, d, n]
                            else:
                                hprev = 0.0
                            g_abar = gh * hprev
                            g_bbar = gh * ut
                            acc_du = acc_du + gh * coef * bt
                            dB[k, b, t, n] += g_bbar * coef
                            g_coef = g_bbar * bt
                            acc_dd = acc_dd + g_abar * an * abar + g_coef * dcoef_dd
                            dA[k, d, n] += g_abar * dt * abar + g_coef * dcoef_dA
                            carry[n] = abar * gh
                        du[k, b, t, d] = acc_du
                        ddelta[k, b, t, d] = acc_dd
    return du_arr, ddelta_arr, dA_arr, dB_arr, dC_arr
