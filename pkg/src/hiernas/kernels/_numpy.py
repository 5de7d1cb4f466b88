"""Pure-numpy reference kernels.

All kernels take already-padded inputs; callers own padding and cropping.
Window index ``t`` inside a ``k x k`` window is ``kh * k + kw``.
"""

import numpy as np


def _window(xp, kh, kw, stride, dilation, out_h, out_w):
    h0 = kh * dilation
    w0 = kw * dilation
    return xp[:, :, h0:h0 + stride * (out_h - 1) + 1:stride, w0:w0 + stride * (out_w - 1) + 1:stride]


def im2col(xp, k, stride, dilation, out_h, out_w):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, out_h, out_w), dtype=xp.dtype)
    for kh in range(k):
        for kw in range(k):
            cols[:, :, kh, kw] = _window(xp, kh, kw, stride, dilation, out_h, out_w)
    return cols


def col2im(cols, height, width, stride, dilation):
    n, c, k, _, out_h, out_w = cols.shape
    out = np.zeros((n, c, height, width), dtype=cols.dtype)
    for kh in range(k):
        for kw in range(k):
            _window(out, kh, kw, stride, dilation, out_h, out_w)[...] += cols[:, :, kh, kw]
    return out


def depthwise_conv(xp, weight, stride, dilation, out_h, out_w):
    n, c = xp.shape[:2]
    k = weight.shape[-1]
    out = np.zeros((n, c, out_h, out_w), dtype=xp.dtype)
    for kh in range(k):
        for kw in range(k):
            out += weight[None, :, kh, kw, None, None] * _window(xp, kh, kw, stride, dilation, out_h, out_w)
    return out


def depthwise_conv_grad(xp, weight, grad_out, stride, dilation):
    k = weight.shape[-1]
    out_h, out_w = grad_out.shape[2:]
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(weight)
    for kh in range(k):
        for kw in range(k):
            win = _window(xp, kh, kw, stride, dilation, out_h, out_w)
            dw[:, kh, kw] = np.einsum("nchw,nchw->c", grad_out, win)
            _window(dxp, kh, kw, stride, dilation, out_h, out_w)[...] += weight[None, :, kh, kw, None, None] * grad_out
    return dxp, dw


def maxpool(xp, k, stride, out_h, out_w):
    n, c = xp.shape[:2]
    cols = im2col(xp, k, stride, 1, out_h, out_w).reshape(n, c, k * k, out_h, out_w)
    # np.argmax returns the first maximal index, i.e. row-major first on ties
    idx = np.argmax(cols, axis=2)
    out = np.take_along_axis(cols, idx[:, :, None], axis=2)[:, :, 0]
    return out, idx


def maxpool_grad(grad_out, idx, k, stride, height, width):
    n, c, out_h, out_w = grad_out.shape
    dcols = np.zeros((n, c, k * k, out_h, out_w), dtype=grad_out.dtype)
    np.put_along_axis(dcols, idx[:, :, None], grad_out[:, :, None], axis=2)
    return col2im(dcols.reshape(n, c, k, k, out_h, out_w), height, width, stride, 1)
