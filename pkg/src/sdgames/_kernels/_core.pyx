# cython: language_level=3
"""Compiled kernels, arithmetic-identical to `pykernels`.

Per-element expression trees and reduction semantics (first extremum wins)
mirror the numpy reference exactly; the build disables FP contraction so the
compiler cannot fuse multiply-adds.  Any change here must keep the
`tests/test_kernels.py` bit-equality suite green.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


def minimax_apply(double[::1] V, double[:, :, :, ::1] coefs, i64[:, ::1] idxs,
                  double[:, :, ::1] f, int code):
    cdef Py_ssize_t n_off = coefs.shape[0]
    cdef Py_ssize_t nU = coefs.shape[1]
    cdef Py_ssize_t nV = coefs.shape[2]
    cdef Py_ssize_t N = coefs.shape[3]
    out_arr = np.empty(N)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, u, v, k
    cdef double h, inner, outer, vi
    cdef bint first_outer
    for i in range(N):
        vi = V[i]
        if code == 0:
            first_outer = True
            for u in range(nU):
                inner = -1e308
                for v in range(nV):
                    h = f[u, v, i]
                    for k in range(n_off):
                        h = h + coefs[k, u, v, i] * (V[idxs[k, i]] - vi)
                    if v == 0 or h > inner:
                        inner = h
                if first_outer or inner < outer:
                    outer = inner
                    first_outer = False
            out[i] = outer
        else:
            first_outer = True
            for v in range(nV):
                inner = 1e308
                for u in range(nU):
                    h = f[u, v, i]
                    for k in range(n_off):
                        h = h + coefs[k, u, v, i] * (V[idxs[k, i]] - vi)
                    if u == 0 or h < inner:
                        inner = h
                if first_outer or inner > outer:
                    outer = inner
                    first_outer = False
            out[i] = outer
    return out_arr


def ratio_apply(double[::1] V, double[:, :, :, ::1] coefs, i64[:, ::1] idxs,
                double[:, :, ::1] f, double[:, :, ::1] rowsum, double lam, int code):
    cdef Py_ssize_t n_off = coefs.shape[0]
    cdef Py_ssize_t nU = coefs.shape[1]
    cdef Py_ssize_t nV = coefs.shape[2]
    cdef Py_ssize_t N = coefs.shape[3]
    out_arr = np.empty(N)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, u, v, k
    cdef double num, inner, outer
    cdef bint first_outer
    for i in range(N):
        if code == 0:
            first_outer = True
            for u in range(nU):
                inner = -1e308
                for v in range(nV):
                    num = f[u, v, i]
                    for k in range(n_off):
                        num = num + coefs[k, u, v, i] * V[idxs[k, i]]
                    num = num / (lam + rowsum[u, v, i])
                    if v == 0 or num > inner:
                        inner = num
                if first_outer or inner < outer:
                    outer = inner
                    first_outer = False
            out[i] = outer
        else:
            first_outer = True
            for v in range(nV):
                inner = 1e308
                for u in range(nU):
                    num = f[u, v, i]
                    for k in range(n_off):
                        num = num + coefs[k, u, v, i] * V[idxs[k, i]]
                    num = num / (lam + rowsum[u, v, i])
                    if u == 0 or num < inner:
                        inner = num
                if first_outer or inner > outer:
                    outer = inner
                    first_outer = False
            out[i] = outer
    return out_arr


def gs_sweep(double[::1] V, double[:, :, :, ::1] coefs, i64[:, ::1] idxs,
             double[:, :, ::1] f, double[:, :, ::1] rowsum, double lam, int code):
    """In-place lexicographic Gauss-Seidel sweep; returns max |update|."""
    cdef Py_ssize_t n_off = coefs.shape[0]
    cdef Py_ssize_t nU = coefs.shape[1]
    cdef Py_ssize_t nV = coefs.shape[2]
    cdef Py_ssize_t N = coefs.shape[3]
    cdef Py_ssize_t i, u, v, k
    cdef double num, inner, outer, d, delta = 0.0
    cdef bint first_outer
    for i in range(N):
        if code == 0:
            first_outer = True
            for u in range(nU):
                inner = -1e308
                for v in range(nV):
                    num = f[u, v, i]
                    for k in range(n_off):
                        num = num + coefs[k, u, v, i] * V[idxs[k, i]]
                    num = num / (lam + rowsum[u, v, i])
                    if v == 0 or num > inner:
                        inner = num
                if first_outer or inner < outer:
                    outer = inner
                    first_outer = False
        else:
            first_outer = True
            for v in range(nV):
                inner = 1e308
                for u in range(nU):
                    num = f[u, v, i]
                    for k in range(n_off):
                        num = num + coefs[k, u, v, i] * V[idxs[k, i]]
                    num = num / (lam + rowsum[u, v, i])
                    if u == 0 or num < inner:
                        inner = num
                if first_outer or inner > outer:
                    outer = inner
                    first_outer = False
        d = outer - V[i]
        if d < 0:
            d = -d
        if d > delta:
            delta = d
        V[i] = outer
    return delta


def euler_affine_block(double[::1] x, double[::1] alpha, double[::1] beta,
                       double sdiff, double[:, ::1] noise, double dt,
                       double[:, ::1] traj):
    cdef Py_ssize_t P = noise.shape[0]
    cdef Py_ssize_t S = noise.shape[1]
    cdef Py_ssize_t p, s
    cdef double xv, drift
    for p in range(P):
        xv = x[p]
        for s in range(S):
            drift = alpha[p] - beta[p] * xv
            xv = xv + drift * dt
            xv = xv + sdiff * noise[p, s]
            traj[p, s] = xv
        x[p] = xv
    return np.asarray(x)


def accumulate_payoff(double[::1] pay, double[:, ::1] fmat, double dt):
    cdef Py_ssize_t P = fmat.shape[0]
    cdef Py_ssize_t S = fmat.shape[1]
    cdef Py_ssize_t p, s
    for p in range(P):
        for s in range(S):
            pay[p] = pay[p] + dt * fmat[p, s]
    return np.asarray(pay)


def accumulate_weighted(double[::1] acc, double[:, ::1] fmat, double[::1] weights):
    cdef Py_ssize_t P = fmat.shape[0]
    cdef Py_ssize_t S = fmat.shape[1]
    cdef Py_ssize_t p, s
    for p in range(P):
        for s in range(S):
            acc[p] = acc[p] + weights[s] * fmat[p, s]
    return np.asarray(acc)


def euler_aug_affine_block(double[::1] xr, double[::1] x_prev, double[:, ::1] traj,
                           double[::1] alpha, double[::1] beta, double sdiff,
                           double half_k, double r, double[:, ::1] noise,
                           double[:, ::1] noise1, double dt, double[:, ::1] traj_out):
    cdef Py_ssize_t P = noise.shape[0]
    cdef Py_ssize_t S = noise.shape[1]
    cdef Py_ssize_t p, s
    cdef double xrv, xk, drift
    for p in range(P):
        xrv = xr[p]
        xk = x_prev[p]
        for s in range(S):
            drift = -half_k * (xrv - xk) + (alpha[p] - beta[p] * xk)
            xrv = xrv + drift * dt
            xrv = xrv + sdiff * noise[p, s]
            xrv = xrv + r * noise1[p, s]
            traj_out[p, s] = xrv
            xk = traj[p, s]
        xr[p] = xrv
    return np.asarray(xr)
