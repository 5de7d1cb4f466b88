"""numba-compiled twins of the numpy kernels in ``_numpy``.

Same signatures and semantics; loops are written so the innermost index walks
contiguous memory. Compiled lazily per dtype and cached on disk.
"""

import numpy as np
from numba import njit

# reassociation lets LLVM vectorise the reductions; no nnan/ninf because the
# max-pool path feeds -inf padding through these modules' callers
_REASSOC = {"reassoc", "contract", "nsz", "arcp"}


@njit(cache=True, nogil=True)
def im2col(xp, k, stride, dilation, out_h, out_w):
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n, c, k, k, out_h, out_w), dtype=xp.dtype)
    for b in range(n):
        for ch in range(c):
            for kh in range(k):
                for kw in range(k):
                    for i in range(out_h):
                        r = i * stride + kh * dilation
                        for j in range(out_w):
                            cols[b, ch, kh, kw, i, j] = xp[b, ch, r, j * stride + kw * dilation]
    return cols


@njit(cache=True, nogil=True)
def col2im(cols, height, width, stride, dilation):
    n, c, k = cols.shape[0], cols.shape[1], cols.shape[2]
    out_h, out_w = cols.shape[4], cols.shape[5]
    out = np.zeros((n, c, height, width), dtype=cols.dtype)
    for b in range(n):
        for ch in range(c):
            for kh in range(k):
                for kw in range(k):
                    for i in range(out_h):
                        r = i * stride + kh * dilation
                        for j in range(out_w):
                            out[b, ch, r, j * stride + kw * dilation] += cols[b, ch, kh, kw, i, j]
    return out


@njit(cache=True, nogil=True, fastmath=_REASSOC)
def depthwise_conv(xp, weight, stride, dilation, out_h, out_w):
    n, c = xp.shape[0], xp.shape[1]
    k = weight.shape[2]
    out = np.zeros((n, c, out_h, out_w), dtype=xp.dtype)
    for b in range(n):
        for ch in range(c):
            for kh in range(k):
                for kw in range(k):
                    wv = weight[ch, kh, kw]
                    c0 = kw * dilation
                    for i in range(out_h):
                        orow = out[b, ch, i]
                        xrow = xp[b, ch, i * stride + kh * dilation]
                        if stride == 1:
                            for j in range(out_w):
                                orow[j] += wv * xrow[j + c0]
                        else:
                            for j in range(out_w):
                                orow[j] += wv * xrow[j * stride + c0]
    return out


@njit(cache=True, nogil=True, fastmath=_REASSOC)
def depthwise_conv_grad(xp, weight, grad_out, stride, dilation):
    n, c = xp.shape[0], xp.shape[1]
    k = weight.shape[2]
    out_h, out_w = grad_out.shape[2], grad_out.shape[3]
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(weight)
    for b in range(n):
        for ch in range(c):
            for kh in range(k):
                for kw in range(k):
                    wv = weight[ch, kh, kw]
                    c0 = kw * dilation
                    acc = weight.dtype.type(0)
                    for i in range(out_h):
                        r = i * stride + kh * dilation
                        grow = grad_out[b, ch, i]
                        xrow = xp[b, ch, r]
                        drow = dxp[b, ch, r]
                        if stride == 1:
                            for j in range(out_w):
                                acc += grow[j] * xrow[j + c0]
                            for j in range(out_w):
                                drow[j + c0] += wv * grow[j]
                        else:
                            for j in range(out_w):
                                acc += grow[j] * xrow[j * stride + c0]
                                drow[j * stride + c0] += wv * grow[j]
                    dw[ch, kh, kw] += acc
    return dxp, dw


@njit(cache=True, nogil=True)
def maxpool(xp, k, stride, out_h, out_w):
    n, c = xp.shape[0], xp.shape[1]
    out = np.empty((n, c, out_h, out_w), dtype=xp.dtype)
    idx = np.empty((n, c, out_h, out_w), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for i in range(out_h):
                for j in range(out_w):
                    best = xp[b, ch, i * stride, j * stride]
                    arg = 0
                    for kh in range(k):
                        for kw in range(k):
                            v = xp[b, ch, i * stride + kh, j * stride + kw]
                            # strict '>' keeps the first maximum in row-major order
                            if v > best:
                                best = v
                                arg = kh * k + kw
                    out[b, ch, i, j] = best
                    idx[b, ch, i, j] = arg
    return out, idx


@njit(cache=True, nogil=True)
def maxpool_grad(grad_out, idx, k, stride, height, width):
    n, c, out_h, out_w = grad_out.shape
    out = np.zeros((n, c, height, width), dtype=grad_out.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(out_h):
                for j in range(out_w):
                    t = idx[b, ch, i, j]
                    out[b, ch, i * stride + t // k, j * stride + t % k] += grad_out[b, ch, i, j]
    return out
