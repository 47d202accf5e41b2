"""Numpy im2col implementation of the 1-D convolution kernels.

Cross-correlation with stride 1 and total padding ``k - 1`` split into
``pad_left`` zeros on the left and ``k - 1 - pad_left`` on the right, so the
output length always equals the input length.  Heavy lifting is one matmul
per direction (BLAS), the rest is packing.
"""

import numpy as np


def _im2col(x, k, pad_left):
    """Stack sliding windows of ``x`` into a (B*L, C_in*k) matrix."""
    B, C_in, L = x.shape
    xp = np.zeros((B, C_in, L + k - 1), dtype=np.float64)
    xp[:, :, pad_left:pad_left + L] = x
    s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(B, C_in, L, k), strides=(s0, s1, s2, s2))
    # (B, L, C_in, k) ordering so each output position owns one packed row
    return windows.transpose(0, 2, 1, 3).reshape(B * L, C_in * k)


def conv1d_forward(x, w, b, pad_left):
    """x: (B, C_in, L), w: (C_out, C_in, k), b: (C_out,) -> (B, C_out, L)."""
    B, C_in, L = x.shape
    C_out, _, k = w.shape
    col = _im2col(x, k, pad_left)
    out = col @ w.reshape(C_out, C_in * k).T
    out += b
    return np.ascontiguousarray(out.reshape(B, L, C_out).transpose(0, 2, 1))


def conv1d_backward(x, w, gy, pad_left):
    """Gradients of conv1d_forward w.r.t. input, weights, and bias."""
    B, C_in, L = x.shape
    C_out, _, k = w.shape
    col = _im2col(x, k, pad_left)
    gy2 = np.ascontiguousarray(gy.transpose(0, 2, 1)).reshape(B * L, C_out)

    gw = (gy2.T @ col).reshape(C_out, C_in, k)
    gb = gy2.sum(axis=0)

    gcol = (gy2 @ w.reshape(C_out, C_in * k)).reshape(B, L, C_in, k)
    gxp = np.zeros((B, C_in, L + k - 1), dtype=np.float64)
    for j in range(k):
        gxp[:, :, j:j + L] += gcol[:, :, :, j].transpose(0, 2, 1)
    gx = np.ascontiguousarray(gxp[:, :, pad_left:pad_left + L])
    return gx, gw, gb
