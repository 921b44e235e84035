"""Fused elementwise kernels for the engine's memory-bound layers.

Every kernel does a single pass over its input. Reductions accumulate in
float64 whatever the array dtype.
"""
import math

import numpy as np
from numba import njit

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946
_SA = SELU_SCALE * SELU_ALPHA


def selu_forward(x):
    # numpy's SIMD expm1 is much faster than a scalar call inside the loop
    return _selu_select(x, np.expm1(np.minimum(x, 0)))


@njit(cache=True)
def _selu_select(x, em1):
    xf = x.ravel()
    ef = em1.ravel()
    out = np.empty_like(xf)
    for i in range(xf.size):
        v = xf[i]
        out[i] = SELU_SCALE * v if v > 0 else _SA * ef[i]
    return out.reshape(x.shape)


@njit(cache=True)
def selu_backward(y, dout):
    # derivative recovered from the output: scale for y > 0, y + scale*alpha otherwise
    yf = y.ravel()
    df = dout.ravel()
    out = np.empty_like(df)
    for i in range(df.size):
        v = yf[i]
        out[i] = df[i] * (SELU_SCALE if v > 0 else v + _SA)
    return out.reshape(dout.shape)


@njit(cache=True)
def bn_stats(x2):
    m, c = x2.shape
    s = np.zeros(c)
    for i in range(m):
        for j in range(c):
            s[j] += x2[i, j]
    mean = s / m
    ss = np.zeros(c)
    for i in range(m):
        for j in range(c):
            d = x2[i, j] - mean[j]
            ss[j] += d * d
    return mean, ss / m


@njit(cache=True)
def bn_apply(x2, mean, inv_std, gamma, beta):
    m, c = x2.shape
    xhat = np.empty_like(x2)
    y = np.empty_like(x2)
    for i in range(m):
        for j in range(c):
            h = (x2[i, j] - mean[j]) * inv_std[j]
            xhat[i, j] = h
            y[i, j] = gamma[j] * h + beta[j]
    return xhat, y


@njit(cache=True)
def bn_backward(xhat, dout, gamma, inv_std):
    m, c = xhat.shape
    dbeta = np.zeros(c)
    dgamma = np.zeros(c)
    for i in range(m):
        for j in range(c):
            dbeta[j] += dout[i, j]
            dgamma[j] += dout[i, j] * xhat[i, j]
    dx = np.empty_like(dout)
    for i in range(m):
        for j in range(c):
            dx[i, j] = gamma[j] * inv_std[j] / m * (m * dout[i, j] - dbeta[j] - xhat[i, j] * dgamma[j])
    return dx, dgamma, dbeta


@njit(cache=True)
def avgpool_forward(x, size, stride, lout):
    n, _, c = x.shape
    out = np.zeros((n, lout, c), dtype=x.dtype)
    inv = 1.0 / size
    for b in range(n):
        for o in range(lout):
            base = o * stride
            for j in range(size):
                for ch in range(c):
                    out[b, o, ch] += x[b, base + j, ch]
            for ch in range(c):
                out[b, o, ch] *= inv
    return out


@njit(cache=True)
def avgpool_backward(dout, length, size, stride):
    n, lout, c = dout.shape
    dx = np.zeros((n, length, c), dtype=dout.dtype)
    inv = 1.0 / size
    for b in range(n):
        for o in range(lout):
            base = o * stride
            for j in range(size):
                for ch in range(c):
                    dx[b, base + j, ch] += dout[b, o, ch] * inv
    return dx


@njit(cache=True)
def maxpool_forward(x, size, stride, lout):
    # ties resolve to the first maximal position in the window
    n, _, c = x.shape
    out = np.empty((n, lout, c), dtype=x.dtype)
    arg = np.empty((n, lout, c), dtype=np.int64)
    for b in range(n):
        for o in range(lout):
            base = o * stride
            for ch in range(c):
                out[b, o, ch] = x[b, base, ch]
                arg[b, o, ch] = base
            for j in range(1, size):
                for ch in range(c):
                    v = x[b, base + j, ch]
                    if v > out[b, o, ch]:
                        out[b, o, ch] = v
                        arg[b, o, ch] = base + j
    return out, arg


@njit(cache=True)
def maxpool_backward(dout, arg, length):
    n, lout, c = dout.shape
    dx = np.zeros((n, length, c), dtype=dout.dtype)
    for b in range(n):
        for o in range(lout):
            for ch in range(c):
                dx[b, arg[b, o, ch], ch] += dout[b, o, ch]
    return dx


@njit(cache=True)
def col2im_add(dcols, length, k):
    # dcols: (n, length, c, k) -> gradient of the padded input (n, length + k - 1, c)
    n, _, c, _ = dcols.shape
    dxp = np.zeros((n, length + k - 1, c), dtype=dcols.dtype)
    for b in range(n):
        for t in range(length):
            for ch in range(c):
                for j in range(k):
                    dxp[b, t + j, ch] += dcols[b, t, ch, j]
    return dxp
