"""numba-jitted twins of the numpy kernels.

Explicit loops, fixed reduction order, no fastmath: results must stay
bit-reproducible run to run and match the numpy backend to ~1e-12.
First call per signature compiles (~1s); ``cache=True`` persists the
compiled code on disk.
"""

import numpy as np
from numba import njit

from .numpy_backend import GELU_A, GELU_C


@njit(cache=True)
def _gelu_fwd(x, out):
    for i in range(x.size):
        v = x[i]
        t = np.tanh(GELU_C * (v + GELU_A * v * v * v))
        out[i] = 0.5 * v * (1.0 + t)


@njit(cache=True)
def _gelu_bwd(x, gy, out):
    for i in range(x.size):
        v = x[i]
        t = np.tanh(GELU_C * (v + GELU_A * v * v * v))
        du = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
        out[i] = gy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)


@njit(cache=True)
def _softmax_rows(x, out):
    rows, n = x.shape
    for r in range(rows):
        m = x[r, 0]
        for j in range(1, n):
            if x[r, j] > m:
                m = x[r, j]
        s = 0.0
        for j in range(n):
            e = np.exp(x[r, j] - m)
            out[r, j] = e
            s += e
        for j in range(n):
            out[r, j] /= s


@njit(cache=True)
def _softmax_rows_bwd(y, gy, out):
    rows, n = y.shape
    for r in range(rows):
        dot = 0.0
        for j in range(n):
            dot += y[r, j] * gy[r, j]
        for j in range(n):
            out[r, j] = y[r, j] * (gy[r, j] - dot)


@njit(cache=True)
def _layernorm_rows(x, gain, bias, eps, y, xhat, rstd):
    rows, d = x.shape
    for r in range(rows):
        mean = 0.0
        for j in range(d):
            mean += x[r, j]
        mean /= d
        var = 0.0
        for j in range(d):
            c = x[r, j] - mean
            var += c * c
        var /= d
        rs = 1.0 / np.sqrt(var + eps)
        rstd[r] = rs
        for j in range(d):
            h = (x[r, j] - mean) * rs
            xhat[r, j] = h
            y[r, j] = h * gain[j] + bias[j]


@njit(cache=True)
def _layernorm_rows_bwd(xhat, rstd, gain, gy, gx, ggain, gbias):
    rows, d = xhat.shape
    for j in range(d):
        ggain[j] = 0.0
        gbias[j] = 0.0
    for r in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            gh = gy[r, j] * gain[j]
            m1 += gh
            m2 += gh * xhat[r, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            gh = gy[r, j] * gain[j]
            gx[r, j] = rstd[r] * (gh - m1 - xhat[r, j] * m2)
            ggain[j] += gy[r, j] * xhat[r, j]
            gbias[j] += gy[r, j]


@njit(cache=True)
def _sq_diff_mean(pred, target):
    s = 0.0
    for i in range(pred.size):
        d = pred[i] - target[i]
        s += d * d
    return s / pred.size


@njit(cache=True)
def _adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(p.size):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def _flat(a):
    return np.ascontiguousarray(a).reshape(-1)


def gelu_forward(x):
    out = np.empty(x.size, dtype=np.float64)
    _gelu_fwd(_flat(x), out)
    return out.reshape(x.shape)


def gelu_backward(x, gy):
    out = np.empty(x.size, dtype=np.float64)
    _gelu_bwd(_flat(x), _flat(gy), out)
    return out.reshape(x.shape)


def softmax_rows(x):
    out = np.empty_like(x)
    _softmax_rows(np.ascontiguousarray(x), out)
    return out


def softmax_rows_backward(y, gy):
    out = np.empty_like(y)
    _softmax_rows_bwd(np.ascontiguousarray(y), np.ascontiguousarray(gy), out)
    return out


def layernorm_rows(x, gain, bias, eps):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(x.shape[0], dtype=np.float64)
    _layernorm_rows(x, gain, bias, eps, y, xhat, rstd)
    return y, xhat, rstd


def layernorm_rows_backward(xhat, rstd, gain, gy):
    gy = np.ascontiguousarray(gy)
    gx = np.empty_like(gy)
    ggain = np.empty(gain.size, dtype=np.float64)
    gbias = np.empty(gain.size, dtype=np.float64)
    _layernorm_rows_bwd(xhat, rstd, gain, gy, gx, ggain, gbias)
    return gx, ggain, gbias


def sq_diff_mean(pred, target):
    return float(_sq_diff_mean(_flat(pred), _flat(target)))


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    _adam_update(p.reshape(-1), _flat(g), m.reshape(-1), v.reshape(-1),
                 t, lr, beta1, beta2, eps)
