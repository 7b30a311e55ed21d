# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# Compiled twins of _kernels_py; same float32 summation order, no FMA contraction
# (setup.py passes -ffp-contract=off).

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv2d_nhwc(const float[:, :, :, ::1] x, const float[:, :, :, ::1] w, bias, int sh, int sw):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], wd = x.shape[2], cin = x.shape[3]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], cout = w.shape[3]
    cdef Py_ssize_t ho = (h - kh) // sh + 1
    cdef Py_ssize_t wo = (wd - kw) // sw + 1
    out_arr = np.empty((n, ho, wo, cout), dtype=np.float32)
    cdef float[:, :, :, ::1] out = out_arr
    cdef const float[::1] b
    cdef bint has_bias = bias is not None
    if has_bias:
        b = bias
    cdef Py_ssize_t bn, oy, ox, co, i, j, c
    cdef float xv
    # Output channels innermost: each out element still sums kh, kw, Cin in order.
    with nogil:
        for bn in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    for co in range(cout):
                        out[bn, oy, ox, co] = 0.0
                    for i in range(kh):
                        for j in range(kw):
                            for c in range(cin):
                                xv = x[bn, oy * sh + i, ox * sw + j, c]
                                for co in range(cout):
                                    out[bn, oy, ox, co] = out[bn, oy, ox, co] + xv * w[i, j, c, co]
                    if has_bias:
                        for co in range(cout):
                            out[bn, oy, ox, co] = out[bn, oy, ox, co] + b[co]
    return out_arr


def matmul(const float[:, ::1] a, const float[:, ::1] bmat):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = bmat.shape[1]
    out_arr = np.empty((m, n), dtype=np.float32)
    cdef float[:, ::1] out = out_arr
    cdef Py_ssize_t r, col, kk
    cdef float av
    with nogil:
        for r in range(m):
            for col in range(n):
                out[r, col] = 0.0
            for kk in range(k):
                av = a[r, kk]
                for col in range(n):
                    out[r, col] = out[r, col] + av * bmat[kk, col]
    return out_arr
