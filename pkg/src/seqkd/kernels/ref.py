"""Pure-numpy sequence kernels: same-padding 1-D convolution, pooling, upsampling.

These are the fallback implementations behind ``seqkd.kernels``. The compiled
module ``_fast`` mirrors every signature here. Pooling and upsampling results
are bit-identical across backends (max-pool ties resolve to the lowest window
offset in both); convolution agrees to float64 round-off, since summation
order differs between direct loops and BLAS.

Array layout is (batch, length, channels) for 1-D kernels and
(batch, rows, cols) for the 2-D max pool. float64 C-contiguous throughout.
"""

import numpy as np

NAME = "numpy"


def conv1d_same(x, w, b):
    """Stride-1 convolution with zero 'same' padding.

    x: (B, L, Cin), w: (K, Cin, Cout) with K odd, b: (Cout,). Returns (B, L, Cout).
    """
    B, L, Cin = x.shape
    K = w.shape[0]
    left = (K - 1) // 2
    xp = np.zeros((B, L + K - 1, Cin), dtype=x.dtype)
    xp[:, left:left + L] = x
    # shifted views of the padded input, one matmul per filter tap
    acc = xp[:, 0:L].reshape(B * L, Cin) @ w[0]
    for k in range(1, K):
        acc += xp[:, k:k + L].reshape(B * L, Cin) @ w[k]
    return acc.reshape(B, L, w.shape[2]) + b


def conv1d_same_backward(x, w, gy):
    """Gradients of conv1d_same wrt input, weights, and bias."""
    B, L, Cin = x.shape
    K, _, Cout = w.shape
    left = (K - 1) // 2
    xp = np.zeros((B, L + K - 1, Cin), dtype=x.dtype)
    xp[:, left:left + L] = x
    g2 = gy.reshape(B * L, Cout)
    gw = np.empty_like(w)
    gxp = np.zeros((B, L + K - 1, Cin), dtype=x.dtype)
    for k in range(K):
        xs = xp[:, k:k + L].reshape(B * L, Cin)
        gw[k] = xs.T @ g2
        gxp[:, k:k + L] += (g2 @ w[k].T).reshape(B, L, Cin)
    gb = g2.sum(axis=0)
    gx = gxp[:, left:left + L]
    return gx, gw, gb


def maxpool1d(x, size):
    """Non-overlapping window max over axis 1; returns (pooled, argmax offsets).

    Ties go to the lowest offset within the window.
    """
    B, L, C = x.shape
    win = x.reshape(B, L // size, size, C)
    arg = win.argmax(axis=2)
    y = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return y, arg.astype(np.int64)


def maxpool1d_backward(arg, gy, size, length):
    B, Lo, C = gy.shape
    gwin = np.zeros((B, Lo, size, C), dtype=gy.dtype)
    np.put_along_axis(gwin, arg[:, :, None, :], gy[:, :, None, :], axis=2)
    return gwin.reshape(B, length, C)


def avgpool1d(x, size):
    """Non-overlapping window mean over axis 1."""
    B, L, C = x.shape
    return x.reshape(B, L // size, size, C).mean(axis=2)


def avgpool1d_backward(gy, size, length):
    B, Lo, C = gy.shape
    g = np.broadcast_to(gy[:, :, None, :] / size, (B, Lo, size, C))
    return g.reshape(B, length, C).copy()


def maxpool2d(x, size):
    """Window max over the last two axes; returns (pooled, flat window offsets).

    x: (N, R, C) with R and C divisible by size. The offset of window element
    (kr, kc) is kr*size + kc; ties go to the lowest offset.
    """
    N, R, C = x.shape
    Ro, Co = R // size, C // size
    win = x.reshape(N, Ro, size, Co, size).transpose(0, 1, 3, 2, 4).reshape(N, Ro, Co, size * size)
    arg = win.argmax(axis=3)
    y = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    return y, arg.astype(np.int64)


def maxpool2d_backward(arg, gy, size, rows, cols):
    N, Ro, Co = gy.shape
    gwin = np.zeros((N, Ro, Co, size * size), dtype=gy.dtype)
    np.put_along_axis(gwin, arg[..., None], gy[..., None], axis=3)
    g = gwin.reshape(N, Ro, Co, size, size).transpose(0, 1, 3, 2, 4)
    return g.reshape(N, rows, cols).copy()


def upsample1d(x, factor):
    """Nearest-neighbor repetition along axis 1."""
    return np.repeat(x, factor, axis=1)


def upsample1d_backward(gy, factor):
    B, Lup, C = gy.shape
    return gy.reshape(B, Lup // factor, factor, C).sum(axis=2)
