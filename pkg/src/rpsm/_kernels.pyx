# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution/pooling kernels.

Bit-identical to rpsm._kernels_py: accumulation runs in the same tap order
and pooling ties resolve to the first (row-major) window element.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv_out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x)
    col = np.empty((n * oh * ow, c * kh * kw))
    cdef double[:, ::1] cv = col
    cdef Py_ssize_t ni, ci, i, j, ki, kj, row, base
    with nogil:
        for ni in range(n):
            for i in range(oh):
                for j in range(ow):
                    row = (ni * oh + i) * ow + j
                    for ci in range(c):
                        base = ci * kh * kw
                        for ki in range(kh):
                            for kj in range(kw):
                                cv[row, base + ki * kw + kj] = xv[ni, ci, i * stride + ki, j * stride + kj]
    return col


def col2im(col, x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    cdef double[:, :, :, ::1] iv = img
    cdef double[:, ::1] cv = np.ascontiguousarray(col)
    cdef Py_ssize_t ni, ci, i, j, ki, kj, row, base
    with nogil:
        # Tap-major accumulation: keeps float summation order identical to
        # the numpy fallback's slice-per-tap loop.
        for ki in range(kh):
            for kj in range(kw):
                for ni in range(n):
                    for ci in range(c):
                        base = ci * kh * kw + ki * kw + kj
                        for i in range(oh):
                            row = (ni * oh + i) * ow
                            for j in range(ow):
                                iv[ni, ci, i * stride + ki, j * stride + kj] += cv[row + j, base]
    if pad:
        img = np.ascontiguousarray(img[:, :, pad:pad + h, pad:pad + w])
    return img


def maxpool_forward(x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x)
    out = np.empty((n, c, oh, ow))
    idx = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] ov = out
    cdef cnp.int64_t[:, :, :, ::1] piv = idx
    cdef Py_ssize_t ni, ci, i, j, u1, u2, y, z, best_y, best_z
    cdef double best, v
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(oh):
                    for j in range(ow):
                        best_y = i * stride
                        best_z = j * stride
                        best = xv[ni, ci, best_y, best_z]
                        for u1 in range(k):
                            y = i * stride + u1
                            for u2 in range(k):
                                z = j * stride + u2
                                v = xv[ni, ci, y, z]
                                if v > best:
                                    best = v
                                    best_y = y
                                    best_z = z
                        ov[ni, ci, i, j] = best
                        piv[ni, ci, i, j] = best_y * w + best_z
    return out, idx


def maxpool_backward(dout, idx, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], oh = dout.shape[2], ow = dout.shape[3]
    dx = np.zeros((n, c, h * w))
    cdef double[:, :, ::1] dv = dx
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(dout)
    cdef cnp.int64_t[:, :, :, ::1] piv = np.ascontiguousarray(idx)
    cdef Py_ssize_t ni, ci, i, j
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(oh):
                    for j in range(ow):
                        dv[ni, ci, piv[ni, ci, i, j]] += gv[ni, ci, i, j]
    return dx.reshape(n, c, h, w)
