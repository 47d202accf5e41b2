# Compiled 1-D convolution kernels: im2col packing in C loops, matrix
# products through BLAS dgemm.  Semantics identical to _conv_np (stride 1,
# total padding k-1 split as pad_left / k-1-pad_left, output length == L).

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm(double[:, ::1] a, bint trans_a,
                double[:, ::1] b, bint trans_b,
                double[:, ::1] out) noexcept nogil:
    # out = op(a) @ op(b) for C-contiguous arrays, delegated to Fortran
    # dgemm via out^T = op(b)^T @ op(a)^T.
    cdef char ta = b'T' if trans_a else b'N'
    cdef char tb = b'T' if trans_b else b'N'
    cdef int m = out.shape[1]
    cdef int n = out.shape[0]
    cdef int k = a.shape[0] if trans_a else a.shape[1]
    cdef int lda = a.shape[1]
    cdef int ldb = b.shape[1]
    cdef int ldc = out.shape[1]
    cdef double one = 1.0, zero = 0.0
    dgemm(&tb, &ta, &m, &n, &k, &one,
          &b[0, 0], &ldb, &a[0, 0], &lda, &zero, &out[0, 0], &ldc)


cdef void _pack(double[:, :, ::1] x, double[:, ::1] col, int k,
                int pad_left) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t n, t, i, j, s, row
    for n in range(B):
        for t in range(L):
            row = n * L + t
            for i in range(C_in):
                for j in range(k):
                    s = t + j - pad_left
                    if 0 <= s < L:
                        col[row, i * k + j] = x[n, i, s]
                    else:
                        col[row, i * k + j] = 0.0


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w,
                   double[::1] b, int pad_left):
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t C_out = w.shape[0], k = w.shape[2]
    col_arr = np.empty((B * L, C_in * k), dtype=np.float64)
    out2_arr = np.empty((B * L, C_out), dtype=np.float64)
    out_arr = np.empty((B, C_out, L), dtype=np.float64)
    cdef double[:, ::1] col = col_arr
    cdef double[:, ::1] out2 = out2_arr
    cdef double[:, ::1] w2 = np.reshape(w, (C_out, C_in * k))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t n, o, t
    with nogil:
        _pack(x, col, k, pad_left)
        _gemm(col, False, w2, True, out2)
        for n in range(B):
            for o in range(C_out):
                for t in range(L):
                    out[n, o, t] = out2[n * L + t, o] + b[o]
    return out_arr


def conv1d_backward(double[:, :, ::1] x, double[:, :, ::1] w,
                    double[:, :, ::1] gy, int pad_left):
    cdef Py_ssize_t B = x.shape[0], C_in = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t C_out = w.shape[0], k = w.shape[2]
    col_arr = np.empty((B * L, C_in * k), dtype=np.float64)
    gy2_arr = np.empty((B * L, C_out), dtype=np.float64)
    gw_arr = np.empty((C_out, C_in * k), dtype=np.float64)
    gb_arr = np.zeros(C_out, dtype=np.float64)
    gcol_arr = np.empty((B * L, C_in * k), dtype=np.float64)
    gx_arr = np.zeros((B, C_in, L), dtype=np.float64)
    cdef double[:, ::1] col = col_arr
    cdef double[:, ::1] gy2 = gy2_arr
    cdef double[:, ::1] gw2 = gw_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] gcol = gcol_arr
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, ::1] w2 = np.reshape(w, (C_out, C_in * k))
    cdef Py_ssize_t n, o, t, i, j, s, row
    with nogil:
        _pack(x, col, k, pad_left)
        for n in range(B):
            for t in range(L):
                row = n * L + t
                for o in range(C_out):
                    gy2[row, o] = gy[n, o, t]
                    gb[o] += gy[n, o, t]
        _gemm(gy2, True, col, False, gw2)
        _gemm(gy2, False, w2, False, gcol)
        for n in range(B):
            for t in range(L):
                row = n * L + t
                for i in range(C_in):
                    for j in range(k):
                        s = t + j - pad_left
                        if 0 <= s < L:
                            gx[n, i, s] += gcol[row, i * k + j]
    return gx_arr, gw_arr.reshape(C_out, C_in, k), gb_arr
