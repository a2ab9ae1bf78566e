"""Pure-NumPy patch extraction and scatter-add, used when the compiled
extension is unavailable. Layout is NHWC throughout."""

import numpy as np


def im2col(xp, kh, kw, stride, dilation, oh, ow):
    n, _, _, c = xp.shape
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=xp.dtype)
    h_span = stride * (oh - 1) + 1
    w_span = stride * (ow - 1) + 1
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            cols[:, :, :, i, j, :] = xp[:, hi:hi + h_span:stride, wj:wj + w_span:stride, :]
    return cols


def col2im(cols, hp, wp, stride, dilation):
    n, oh, ow, kh, kw, c = cols.shape
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    h_span = stride * (oh - 1) + 1
    w_span = stride * (ow - 1) + 1
    for i in range(kh):
        hi = i * dilation
        for j in range(kw):
            wj = j * dilation
            out[:, hi:hi + h_span:stride, wj:wj + w_span:stride, :] += cols[:, :, :, i, j, :]
    return out
