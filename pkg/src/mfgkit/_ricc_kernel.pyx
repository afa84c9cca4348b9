# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 sweep for affine-quadratic matrix ODEs.

dX/dt = C(t) + L(t) X + X D(t) + q * X W X, with C, L, D sampled on the
half grid (index 2k = node k, index 2k+1 = the midpoint above it).
"""

import numpy as np


cdef inline void _rhs(double[:, :, ::1] C, double[:, :, ::1] L, double[:, :, ::1] D,
                      double[:, ::1] W, double q, int idx, double[:, ::1] X,
                      double[:, ::1] XW, double[:, ::1] out, int n) noexcept nogil:
    cdef int i, j, k
    cdef double acc
    for i in range(n):
        for j in range(n):
            acc = C[idx, i, j]
            for k in range(n):
                acc += L[idx, i, k] * X[k, j] + X[i, k] * D[idx, k, j]
            out[i, j] = acc
    if q != 0.0:
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += X[i, k] * W[k, j]
                XW[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc += XW[i, k] * X[k, j]
                out[i, j] += q * acc


def rk4_backward_aq(double[:, :, ::1] C, double[:, :, ::1] L, double[:, :, ::1] D,
                    double[:, ::1] W, double q, double[:, ::1] terminal,
                    double h, int num_steps, bint symmetrize, double bound):
    """Return node values (num_steps + 1, n, n); index num_steps holds `terminal`."""
    cdef int n = terminal.shape[0]
    out_arr = np.empty((num_steps + 1, n, n))
    cdef double[:, :, ::1] out = out_arr
    x_arr = np.empty((n, n))
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] stage = np.empty((n, n))
    cdef double[:, ::1] xw = np.empty((n, n))
    cdef double[:, ::1] k1 = np.empty((n, n))
    cdef double[:, ::1] k2 = np.empty((n, n))
    cdef double[:, ::1] k3 = np.empty((n, n))
    cdef double[:, ::1] k4 = np.empty((n, n))
    cdef double[:, ::1] comp = np.zeros((n, n))  # Kahan compensation
    cdef int step, i, j
    cdef int blow_step = -1
    cdef double peak, v, delta, yy, tt

    for i in range(n):
        for j in range(n):
            x[i, j] = terminal[i, j]
            out[num_steps, i, j] = terminal[i, j]

    with nogil:
        for step in range(num_steps - 1, -1, -1):
            _rhs(C, L, D, W, q, 2 * step + 2, x, xw, k1, n)
            for i in range(n):
                for j in range(n):
                    stage[i, j] = x[i, j] - 0.5 * h * k1[i, j]
            _rhs(C, L, D, W, q, 2 * step + 1, stage, xw, k2, n)
            for i in range(n):
                for j in range(n):
                    stage[i, j] = x[i, j] - 0.5 * h * k2[i, j]
            _rhs(C, L, D, W, q, 2 * step + 1, stage, xw, k3, n)
            for i in range(n):
                for j in range(n):
                    stage[i, j] = x[i, j] - h * k3[i, j]
            _rhs(C, L, D, W, q, 2 * step, stage, xw, k4, n)
            for i in range(n):
                for j in range(n):
                    delta = -(h / 6.0) * (
                        k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
                    yy = delta - comp[i, j]
                    tt = x[i, j] + yy
                    comp[i, j] = (tt - x[i, j]) - yy
                    x[i, j] = tt
            if symmetrize:
                for i in range(n):
                    for j in range(i + 1, n):
                        v = 0.5 * (x[i, j] + x[j, i])
                        x[i, j] = v
                        x[j, i] = v
                        v = 0.5 * (comp[i, j] + comp[j, i])
                        comp[i, j] = v
                        comp[j, i] = v
            peak = 0.0
            for i in range(n):
                for j in range(n):
                    v = x[i, j] if x[i, j] >= 0.0 else -x[i, j]
                    if v > peak or v != v:
                        peak = v if v == v else bound * 2.0
            if not peak <= bound:
                blow_step = step
                break
            for i in range(n):
                for j in range(n):
                    out[step, i, j] = x[i, j]

    if blow_step >= 0:
        return None, blow_step
    return out_arr, -1
