"""Pure-numpy implementations of the hot kernels.

This is the fallback backend (``VARFORMER_KERNELS=numpy``) and the
reference the numba twins are checked against. Row kernels take a 2D
``(rows, d)`` view; elementwise kernels take any contiguous array.
"""

import numpy as np

GELU_C = 0.7978845608028654  # sqrt(2/pi)
GELU_A = 0.044715


def gelu_forward(x):
    inner = GELU_C * (x + GELU_A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def gelu_backward(x, gy):
    inner = GELU_C * (x + GELU_A * x * x * x)
    t = np.tanh(inner)
    # d/dx [0.5 x (1 + tanh(u))] = 0.5 (1 + tanh u) + 0.5 x sech^2(u) u'
    du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(y, gy):
    dot = (y * gy).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_rows(x, gain, bias, eps):
    """Returns (y, xhat, rstd); xhat and rstd feed the backward pass."""
    mean = x.mean(axis=1, keepdims=True)
    var = np.square(x - mean).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layernorm_rows_backward(xhat, rstd, gain, gy):
    gxhat = gy * gain
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = rstd[:, None] * (gxhat - m1 - xhat * m2)
    ggain = (gy * xhat).sum(axis=0)
    gbias = gy.sum(axis=0)
    return gx, ggain, gbias


def sq_diff_mean(pred, target):
    d = pred - target
    return float(np.mean(d * d))


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """In-place Adam step with bias correction on flat float64 buffers."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
