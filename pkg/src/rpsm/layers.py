"""Parameterized layers: convolution, fully-connected, LSTM cell.

Layers own named parameter Tensors and are thin wrappers over the
autodiff primitives.  Naming matters: the checkpoint container stores
parameters by the names reported from ``parameters()``.
"""

import math

import numpy as np

from rpsm import tensor
from rpsm.tensor import Tensor


def xavier_init(shape, fan_in, fan_out, rng):
    """Uniform draw from [-b, b], b = sqrt(6/(fan_in+fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("xavier_init fans must be positive, got %d, %d" % (fan_in, fan_out))
    b = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-b, b, size=shape), requires_grad=True)


class Conv2d:
    """2D cross-correlation with bias.  Output extent floor((n+2p-k)/s)+1."""

    def __init__(self, name, in_ch, out_ch, k, stride, pad, rng):
        self.name = name
        self.stride = stride
        self.pad = pad
        self.weight = xavier_init((out_ch, in_ch, k, k), in_ch * k * k, out_ch * k * k, rng)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x):
        return tensor.conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def parameters(self):
        return [(self.name + ".weight", self.weight), (self.name + ".bias", self.bias)]


class Linear:
    def __init__(self, name, in_dim, out_dim, rng):
        self.name = name
        self.weight = xavier_init((out_dim, in_dim), in_dim, out_dim, rng)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x):
        return tensor.linear(x, self.weight, self.bias)

    def parameters(self):
        return [(self.name + ".weight", self.weight), (self.name + ".bias", self.bias)]


class LstmCell:
    """Single LSTM cell without peepholes.

    Gate blocks are packed along the first axis in the order
    (input, forget, candidate, output); the forget-gate bias starts
    at 1.0 to keep early memory open.
    """

    def __init__(self, name, input_dim, hidden_dim, rng):
        self.name = name
        self.hidden_dim = hidden_dim
        self.w_x = xavier_init((4 * hidden_dim, input_dim), input_dim, hidden_dim, rng)
        self.w_h = xavier_init((4 * hidden_dim, hidden_dim), hidden_dim, hidden_dim, rng)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = 1.0
        self.bias = Tensor(b, requires_grad=True)

    def step(self, x, h_prev, c_prev):
        hd = self.hidden_dim
        if h_prev.shape[1] != hd or c_prev.shape[1] != hd:
            raise ValueError("lstm state extent mismatch: %r, %r vs hidden %d"
                             % (h_prev.shape, c_prev.shape, hd))
        gates = tensor.linear(x, self.w_x, self.bias) + tensor.linear(h_prev, self.w_h)
        i = tensor.narrow(gates, 1, 0, hd).sigmoid()
        f = tensor.narrow(gates, 1, hd, hd).sigmoid()
        g = tensor.narrow(gates, 1, 2 * hd, hd).tanh()
        o = tensor.narrow(gates, 1, 3 * hd, hd).sigmoid()
        c = f * c_prev + i * g
        h = o * c.tanh()
        return h, c

    def parameters(self):
        return [(self.name + ".w_x", self.w_x),
                (self.name + ".w_h", self.w_h),
                (self.name + ".bias", self.bias)]
