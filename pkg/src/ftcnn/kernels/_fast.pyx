# Compiled hot kernels: sliding-window convolution and max pooling with
# their backward passes.  Loop order is fixed, so results are deterministic;
# summation order differs from the numpy reference by ~1e-15 relative.
#
# The convolution loops keep the output/input rows unit-stride innermost and
# hoist the kernel weight to a scalar, which lets the compiler vectorize the
# column sweeps.  All convolutions are "valid": the caller applies zero
# padding beforehand.

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   double[::1] b, int stride):
    """Cross-correlate x (B,C,H,W) with kernels w (O,C,kh,kw) plus bias b (O,)."""
    cdef Py_ssize_t bsz = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t n_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (wd - kw) // stride + 1
    y_arr = np.empty((bsz, n_out, oh, ow), dtype=np.float64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef Py_ssize_t n, o, i, j, c, u, v, xi
    cdef double wv, bias
    with nogil:
        for n in range(bsz):
            for o in range(n_out):
                bias = b[o]
                for i in range(oh):
                    for j in range(ow):
                        y[n, o, i, j] = bias
            for c in range(c_in):
                for o in range(n_out):
                    for u in range(kh):
                        for v in range(kw):
                            wv = w[o, c, u, v]
                            for i in range(oh):
                                xi = i * stride + u
                                for j in range(ow):
                                    y[n, o, i, j] += wv * x[n, c, xi, j * stride + v]
    return y_arr


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] gy, int stride):
    """Gradients of conv2d_forward w.r.t. input, weights, and bias."""
    cdef Py_ssize_t bsz = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t n_out = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    gx_arr = np.zeros((bsz, c_in, h, wd), dtype=np.float64)
    gw_arr = np.zeros((n_out, c_in, kh, kw), dtype=np.float64)
    gb_arr = np.zeros(n_out, dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t n, o, i, j, c, u, v, xi
    cdef double g, wv, acc
    with nogil:
        for n in range(bsz):
            for o in range(n_out):
                acc = 0.0
                for i in range(oh):
                    for j in range(ow):
                        acc += gy[n, o, i, j]
                gb[o] += acc
            for c in range(c_in):
                for o in range(n_out):
                    for u in range(kh):
                        for v in range(kw):
                            wv = w[o, c, u, v]
                            acc = 0.0
                            for i in range(oh):
                                xi = i * stride + u
                                for j in range(ow):
                                    g = gy[n, o, i, j]
                                    gx[n, c, xi, j * stride + v] += g * wv
                                    acc += g * x[n, c, xi, j * stride + v]
                            gw[o, c, u, v] += acc
    return gx_arr, gw_arr, gb_arr


def maxpool_forward(double[:, :, :, ::1] x, int kh, int kw, int stride):
    """Max pooling; returns pooled map and flat in-window argmax (first max wins)."""
    cdef Py_ssize_t bsz = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t oh = (h - kh) // stride + 1
    cdef Py_ssize_t ow = (wd - kw) // stride + 1
    y_arr = np.empty((bsz, c_in, oh, ow), dtype=np.float64)
    idx_arr = np.empty((bsz, c_in, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] y = y_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, i, j, u, v, i0, j0, best_k
    cdef double best, val
    with nogil:
        for n in range(bsz):
            for c in range(c_in):
                for i in range(oh):
                    i0 = i * stride
                    for j in range(ow):
                        j0 = j * stride
                        best = x[n, c, i0, j0]
                        best_k = 0
                        for u in range(kh):
                            for v in range(kw):
                                val = x[n, c, i0 + u, j0 + v]
                                if val > best:
                                    best = val
                                    best_k = u * kw + v
                        y[n, c, i, j] = best
                        idx[n, c, i, j] = best_k
    return y_arr, idx_arr


def maxpool_backward(double[:, :, :, ::1] gy, cnp.int64_t[:, :, :, ::1] idx,
                     int kh, int kw, int stride, int h, int w):
    """Scatter pooled gradients back to the argmax positions."""
    cdef Py_ssize_t bsz = gy.shape[0], c_in = gy.shape[1]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    gx_arr = np.zeros((bsz, c_in, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, i, j, k
    with nogil:
        for n in range(bsz):
            for c in range(c_in):
                for i in range(oh):
                    for j in range(ow):
                        k = idx[n, c, i, j]
                        gx[n, c, i * stride + k // kw, j * stride + k % kw] += gy[n, c, i, j]
    return gx_arr
