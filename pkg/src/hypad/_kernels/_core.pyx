# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence and DTW kernels (see ``_reference`` for the contract)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, fabs, INFINITY
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _min3(double a, double b, double c) noexcept nogil:
    if b < a:
        a = b
    if c < a:
        a = c
    return a


cdef void _step_forward(double* a, const double* c_prev, double* c, double* h, int B, int H) noexcept nogil:
    # a holds the pre-activation on entry and the activated gates on exit
    cdef int b, j, G = 4 * H
    cdef double* ar
    cdef const double* cpr
    cdef double* cr
    cdef double* hr
    for b in range(B):
        ar = a + b * G
        cpr = c_prev + b * H
        cr = c + b * H
        hr = h + b * H
        for j in range(3 * H):
            ar[j] = 1.0 / (1.0 + exp(-ar[j]))
        for j in range(3 * H, G):
            ar[j] = tanh(ar[j])
        for j in range(H):
            cr[j] = ar[H + j] * cpr[j] + ar[j] * ar[3 * H + j]
        for j in range(H):
            hr[j] = ar[2 * H + j] * tanh(cr[j])


def lstm_forward(const double[:, :, ::1] xproj, const double[:, ::1] U):
    cdef int T = xproj.shape[0], B = xproj.shape[1], G = xproj.shape[2]
    cdef int H = G // 4
    hs_arr = np.empty((T, B, H))
    cs_arr = np.empty((T, B, H))
    gates_arr = np.array(xproj, dtype=np.float64, order="C", copy=True)
    if T == 0 or B == 0 or H == 0:
        return hs_arr, cs_arr, gates_arr
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] cs = cs_arr
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[::1] zeros = np.zeros(B * H)
    cdef int t
    cdef double one = 1.0
    cdef char* nn = b"n"
    with nogil:
        _step_forward(&gates[0, 0, 0], &zeros[0], &cs[0, 0, 0], &hs[0, 0, 0], B, H)
        for t in range(1, T):
            dgemm(nn, nn, &G, &B, &H, &one, <double*>&U[0, 0], &G, &hs[t - 1, 0, 0], &H, &one, &gates[t, 0, 0], &G)
            _step_forward(&gates[t, 0, 0], &cs[t - 1, 0, 0], &cs[t, 0, 0], &hs[t, 0, 0], B, H)
    return hs_arr, cs_arr, gates_arr


cdef void _step_backward(const double* a, const double* c_prev, const double* c, const double* dh_in,
                         double* dh_next, double* dc_next, double* dz, double* tc, int B, int H) noexcept nogil:
    cdef int b, j, G = 4 * H
    cdef const double* ar
    cdef double* dzr
    cdef double dh, dc, i_, f_, o_, g_
    for b in range(B):
        ar = a + b * G
        dzr = dz + b * G
        for j in range(H):
            tc[j] = tanh(c[b * H + j])
        for j in range(H):
            i_ = ar[j]
            f_ = ar[H + j]
            o_ = ar[2 * H + j]
            g_ = ar[3 * H + j]
            dh = dh_in[b * H + j] + dh_next[b * H + j]
            dc = dh * o_ * (1.0 - tc[j] * tc[j]) + dc_next[b * H + j]
            dzr[j] = dc * g_ * i_ * (1.0 - i_)
            dzr[H + j] = dc * c_prev[b * H + j] * f_ * (1.0 - f_)
            dzr[2 * H + j] = dh * tc[j] * o_ * (1.0 - o_)
            dzr[3 * H + j] = dc * i_ * (1.0 - g_ * g_)
            dc_next[b * H + j] = dc * f_


def lstm_backward(const double[:, :, ::1] dhs, const double[:, ::1] U,
                  const double[:, :, ::1] hs, const double[:, :, ::1] cs,
                  const double[:, :, ::1] gates):
    cdef int T = dhs.shape[0], B = dhs.shape[1], H = dhs.shape[2]
    cdef int G = 4 * H
    dz_arr = np.zeros((T, B, G))
    if T == 0 or B == 0 or H == 0:
        return dz_arr, np.zeros((H, G))
    cdef double[:, :, ::1] dz = dz_arr
    cdef double[::1] dh_next = np.zeros(B * H)
    cdef double[::1] dc_next = np.zeros(B * H)
    cdef double[::1] zeros = np.zeros(B * H)
    cdef double[::1] tc = np.empty(H)
    cdef int t
    cdef const double* c_prev
    cdef double one = 1.0, zero = 0.0
    cdef char* tt = b"t"
    cdef char* nn = b"n"
    with nogil:
        for t in range(T - 1, -1, -1):
            c_prev = &cs[t - 1, 0, 0] if t > 0 else &zeros[0]
            _step_backward(&gates[t, 0, 0], c_prev, &cs[t, 0, 0], &dhs[t, 0, 0],
                           &dh_next[0], &dc_next[0], &dz[t, 0, 0], &tc[0], B, H)
            dgemm(tt, nn, &H, &B, &G, &one, <double*>&U[0, 0], &G, &dz[t, 0, 0], &G, &zero, &dh_next[0], &H)
    hs_np = np.asarray(hs)
    dU = hs_np[:-1].reshape(-1, H).T @ dz_arr[1:].reshape(-1, G)
    return dz_arr, dU


cdef double _dtw(const double* a, int n, const double* b, int m, int radius,
                 double* prev, double* row) noexcept nogil:
    # radius < 0: unconstrained; otherwise |i - j| <= radius (Sakoe-Chiba band)
    cdef int i, j, lo, hi
    cdef double* tmp
    cdef double inf = INFINITY
    for j in range(m):
        prev[j] = inf
    hi = m - 1 if radius < 0 else min(m - 1, radius)
    prev[0] = fabs(a[0] - b[0])
    for j in range(1, hi + 1):
        prev[j] = prev[j - 1] + fabs(a[0] - b[j])
    for i in range(1, n):
        if radius < 0:
            lo = 0
            hi = m - 1
        else:
            lo = max(0, i - radius)
            hi = min(m - 1, i + radius)
        for j in range(m):
            row[j] = inf
        if lo == 0:
            row[0] = prev[0] + fabs(a[i] - b[0])
            lo = 1
        for j in range(lo, hi + 1):
            row[j] = fabs(a[i] - b[j]) + _min3(prev[j - 1], prev[j], row[j - 1])
        tmp = prev
        prev = row
        row = tmp
    return prev[m - 1]


def dtw(a, b, int radius=-1):
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef int n = av.shape[0], m = bv.shape[0]
    if n == 0 or m == 0:
        raise ValueError("dtw needs non-empty sequences")
    cdef double[::1] work = np.empty(2 * m)
    cdef double out
    with nogil:
        out = _dtw(&av[0], n, &bv[0], m, radius, &work[0], &work[m])
    return out


def dtw_rows(X, Y, int radius=-1):
    cdef const double[:, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef int N = xv.shape[0], n = xv.shape[1], m = yv.shape[1]
    out_arr = np.empty(N)
    if N == 0:
        return out_arr
    if n == 0 or m == 0:
        raise ValueError("dtw needs non-empty sequences")
    cdef double[::1] out = out_arr
    cdef double[::1] work = np.empty(2 * m)
    cdef int k
    with nogil:
        for k in range(N):
            out[k] = _dtw(&xv[k, 0], n, &yv[k, 0], m, radius, &work[0], &work[m])
    return out_arr
