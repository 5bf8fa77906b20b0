"""Pure-numpy implementations of the hot convolution/pooling kernels.

Every function here has a compiled twin in ``rpsm._kernels`` (Cython).  The
two must stay bit-identical: same element traversal order for accumulating
operations, same first-index tie-breaking for pooling.  ``rpsm.kernels``
picks one of the two at import time.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_extent(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """Unfold (N,C,H,W) into patch rows of shape (N*oh*ow, C*kh*kw).

    Row (n, i, j) holds the receptive field of output pixel (i, j) of
    sample n, channels varying slowest.
    """
    n, c, h, w = x.shape
    oh = conv_out_extent(h, kh, stride, pad)
    ow = conv_out_extent(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    col = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(col)


def col2im(col, x_shape, kh, kw, stride, pad):
    """Fold patch rows back onto the (N,C,H,W) grid, summing overlaps.

    Adjoint of :func:`im2col`; overlap accumulation runs in ascending
    (ki, kj) tap order so results match the compiled kernel bitwise.
    """
    n, c, h, w = x_shape
    oh = conv_out_extent(h, kh, stride, pad)
    ow = conv_out_extent(w, kw, stride, pad)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    taps = col.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for ki in range(kh):
        for kj in range(kw):
            img[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += taps[:, :, ki, kj]
    if pad:
        img = img[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(img)


def maxpool_forward(x, k, stride):
    """Windowed maximum over (N,C,H,W); ties resolve to the first index.

    Returns (out, idx) where idx holds, per output pixel, the flat H*W
    plane index of the selected input element.
    """
    n, c, h, w = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(n, c, oh, ow, k * k)
    arg = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * stride + arg // k
    cols = np.arange(ow)[None, :] * stride + arg % k
    idx = rows * w + cols
    return np.ascontiguousarray(out), np.ascontiguousarray(idx.astype(np.int64))


def maxpool_backward(dout, idx, h, w):
    """Scatter upstream gradient to each window's argmax position."""
    n, c = dout.shape[:2]
    dx = np.zeros((n, c, h * w))
    np.add.at(
        dx,
        (np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None], idx),
        dout,
    )
    return dx.reshape(n, c, h, w)
