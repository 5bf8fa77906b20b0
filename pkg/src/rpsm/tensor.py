"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps a float64 ndarray plus an optional gradient slot.  Each
differentiable operation records a backward closure and its input nodes;
``backward()`` on a scalar topologically sorts the recorded graph, seeds
the output gradient with 1 and accumulates input gradients additively.
The tape is freed as part of backward, so graphs are per-forward-pass.

Gradients are only propagated into tensors that require them (or depend
on one that does); wrap inference in ``no_grad()`` to skip recording
entirely and avoid keeping convolution buffers alive.
"""

import contextlib
import threading

import numpy as np

from rpsm import kernels

# per-thread so concurrent no_grad inference cannot disable recording
# (or leak a tape) in another thread
_STATE = threading.local()


def _grad_enabled():
    return getattr(_STATE, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only mode)."""
    prev = _grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return "Tensor(shape=%r, requires_grad=%r)" % (self.shape, self.requires_grad)

    def _tracked(self):
        return self.requires_grad or bool(self._prev)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph plumbing ------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar; frees the tape as it goes."""
        if self.data.shape != ():
            raise ValueError("backward requires a scalar, got shape %r" % (self.shape,))
        topo, seen, stack = [], set(), [(self, iter(self._prev))]
        seen.add(id(self))
        while stack:
            node, it = stack[-1]
            child = next(it, None)
            if child is None:
                stack.pop()
                topo.append(node)
            elif id(child) not in seen:
                seen.add(id(child))
                stack.append((child, iter(child._prev)))
        self.grad = np.ones(())
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._backward = None
            node._prev = ()

    # -- elementwise arithmetic ----------------------------------------

    def __add__(self, other):
        if not isinstance(other, Tensor):
            out = _make(self.data + other, (self,))
            if out._prev:
                out._backward = lambda g: self._accum(g)
            return out
        if self.shape != other.shape:
            raise ValueError("shape mismatch for add: %r vs %r" % (self.shape, other.shape))
        out = _make(self.data + other.data, (self, other))
        if out._prev:
            def bw(g):
                if self._tracked():
                    self._accum(g)
                if other._tracked():
                    other._accum(g)
            out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = _make(-self.data, (self,))
        if out._prev:
            out._backward = lambda g: self._accum(-g)
        return out

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            out = _make(self.data - other, (self,))
            if out._prev:
                out._backward = lambda g: self._accum(g)
            return out
        if self.shape != other.shape:
            raise ValueError("shape mismatch for sub: %r vs %r" % (self.shape, other.shape))
        out = _make(self.data - other.data, (self, other))
        if out._prev:
            def bw(g):
                if self._tracked():
                    self._accum(g)
                if other._tracked():
                    other._accum(-g)
            out._backward = bw
        return out

    def __rsub__(self, other):
        out = _make(other - self.data, (self,))
        if out._prev:
            out._backward = lambda g: self._accum(-g)
        return out

    def __mul__(self, other):
        if not isinstance(other, Tensor):
            out = _make(self.data * other, (self,))
            if out._prev:
                out._backward = lambda g: self._accum(g * other)
            return out
        if self.shape != other.shape:
            raise ValueError("shape mismatch for mul: %r vs %r" % (self.shape, other.shape))
        out = _make(self.data * other.data, (self, other))
        if out._prev:
            a_data, b_data = self.data, other.data
            def bw(g):
                if self._tracked():
                    self._accum(g * b_data)
                if other._tracked():
                    other._accum(g * a_data)
            out._backward = bw
        return out

    __rmul__ = __mul__

    # -- shape ops ------------------------------------------------------

    def reshape(self, *shape):
        old = self.data.shape
        out = _make(self.data.reshape(*shape), (self,))
        if out._prev:
            out._backward = lambda g: self._accum(g.reshape(old))
        return out

    # -- reductions and nonlinearities -----------------------------------

    def sum(self):
        out = _make(self.data.sum(), (self,))
        if out._prev:
            shape = self.data.shape
            out._backward = lambda g: self._accum(np.broadcast_to(g, shape))
        return out

    def relu(self):
        mask = self.data > 0
        out = _make(np.where(mask, self.data, 0.0), (self,))
        if out._prev:
            out._backward = lambda g: self._accum(g * mask)
        return out

    def sigmoid(self):
        # exp overflows to inf for very negative inputs; the result (0.0)
        # is still exact, so silence the spurious warning
        with np.errstate(over="ignore"):
            y = 1.0 / (1.0 + np.exp(-self.data))
        out = _make(y, (self,))
        if out._prev:
            out._backward = lambda g: self._accum(g * y * (1.0 - y))
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = _make(y, (self,))
        if out._prev:
            out._backward = lambda g: self._accum(g * (1.0 - y * y))
        return out

    # -- linear algebra ---------------------------------------------------

    def __matmul__(self, other):
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2-d operands, got %r and %r" % (self.shape, other.shape))
        if self.shape[1] != other.shape[0]:
            raise ValueError("matmul inner extents differ: %r vs %r" % (self.shape, other.shape))
        out = _make(self.data @ other.data, (self, other))
        if out._prev:
            a_data, b_data = self.data, other.data
            def bw(g):
                if self._tracked():
                    self._accum(g @ b_data.T)
                if other._tracked():
                    other._accum(a_data.T @ g)
            out._backward = bw
        return out


def _make(data, inputs):
    """Build an op output; records input links only when a grad can flow."""
    out = Tensor(data)
    if _grad_enabled():
        prev = tuple(t for t in inputs if t._tracked())
        out._prev = prev
    return out


def concat(tensors, axis):
    """Concatenate along ``axis``; backward splits the gradient back."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    base = tensors[0].shape
    for t in tensors[1:]:
        a, b = list(base), list(t.shape)
        a[axis] = b[axis] = 0
        if a != b:
            raise ValueError("concat extents ragged off axis %d: %r vs %r" % (axis, base, t.shape))
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out._prev:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bw(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t._tracked():
                    t._accum(piece)
        out._backward = bw
    return out


def narrow(t, axis, start, length):
    """Slice ``length`` extents from ``start`` along ``axis``."""
    idx = [slice(None)] * t.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _make(t.data[idx], (t,))
    if out._prev:
        def bw(g):
            full = np.zeros_like(t.data)
            full[idx] = g
            t._accum(full)
        out._backward = bw
    return out


def linear(x, w, b=None):
    """x (n,in) @ w(out,in)^T + b(out,) -> (n,out); bias optional."""
    if x.shape[1] != w.shape[1]:
        raise ValueError("linear extent mismatch: input %r vs weights %r" % (x.shape, w.shape))
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    out = _make(y, (x, w, b) if b is not None else (x, w))
    if out._prev:
        def bw(g):
            if x._tracked():
                x._accum(g @ w.data)
            if w._tracked():
                w._accum(g.T @ x.data)
            if b is not None and b._tracked():
                b._accum(g.sum(axis=0))
        out._backward = bw
    return out


def conv2d(x, w, b, stride=1, pad=0):
    """Cross-correlation of (N,C,H,W) with (O,C,kh,kw) kernels plus bias."""
    n, c, h, wd = x.data.shape
    oc, ic, kh, kw = w.data.shape
    if c != ic:
        raise ValueError("conv2d channel mismatch: input %d vs kernel %d" % (c, ic))
    oh = kernels.conv_out_extent(h, kh, stride, pad)
    ow = kernels.conv_out_extent(wd, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ValueError("conv2d degenerate output extent %dx%d from input %r" % (oh, ow, x.shape))
    col = kernels.im2col(x.data, kh, kw, stride, pad)
    w2 = w.data.reshape(oc, -1)
    y = (col @ w2.T + b.data).reshape(n, oh, ow, oc).transpose(0, 3, 1, 2)
    out = _make(np.ascontiguousarray(y), (x, w, b))
    if out._prev:
        x_shape = x.data.shape
        def bw(g):
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, oc)
            if b._tracked():
                b._accum(g2.sum(axis=0))
            if w._tracked():
                w._accum((g2.T @ col).reshape(w.data.shape))
            if x._tracked():
                x._accum(kernels.col2im(g2 @ w2, x_shape, kh, kw, stride, pad))
        out._backward = bw
    return out


def maxpool2d(x, k, stride):
    """Windowed max over (N,C,H,W); gradient routes to each argmax."""
    n, c, h, w = x.data.shape
    if h < k or w < k:
        raise ValueError("maxpool window %d exceeds input %r" % (k, x.shape))
    y, idx = kernels.maxpool_forward(x.data, k, stride)
    out = _make(y, (x,))
    if out._prev:
        out._backward = lambda g: x._accum(kernels.maxpool_backward(g, idx, h, w))
    return out
