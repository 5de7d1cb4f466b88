"""Differentiable operations on :class:`~hiernas.tensor.Tensor`.

No broadcasting: binary ops require identical shapes, except where a scalar
(0-d or single-element) tensor multiplies a whole tensor.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import kernels
from .tensor import Tensor


def _contig(a):
    return np.ascontiguousarray(a)


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of equally shaped tensors (node aggregation in a cell)."""
    if not tensors:
        raise ValueError("add_n: need at least one tensor")
    for t in tensors[1:]:
        _check_same_shape("add_n", tensors[0], t)
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data
    return Tensor._from_op(out, tuple(tensors), lambda g: (g,) * len(tensors), "add_n")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return Tensor._from_op(a.data + a.data.dtype.type(c), (a,), lambda g: (g,), "add_scalar")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return Tensor._from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scalar_mul(a: Tensor, c) -> Tensor:
    """``c * a`` where ``c`` is a python float or a single-element tensor."""
    if isinstance(c, Tensor):
        if c.size != 1:
            raise ValueError(f"scalar_mul: scale must have one element, got shape {c.shape}")
        s = c.data.reshape(())
        out = (a.data * s).astype(a.data.dtype, copy=False)
        return Tensor._from_op(
            out,
            (a, c),
            lambda g: ((g * s).astype(a.data.dtype, copy=False), np.reshape(np.vdot(g, a.data), c.shape).astype(c.data.dtype)),
            "scalar_mul",
        )
    s = a.data.dtype.type(c)
    return Tensor._from_op(a.data * s, (a,), lambda g: (g * s,), "scalar_mul")


def weighted_sum(tensors: Sequence[Tensor], weights: Tensor) -> Tensor:
    """``sum_k weights[k] * tensors[k]``, differentiable in both arguments."""
    if weights.ndim != 1 or weights.shape[0] != len(tensors):
        raise ValueError(f"weighted_sum: {len(tensors)} tensors but weights of shape {weights.shape}")
    if not tensors:
        raise ValueError("weighted_sum: need at least one tensor")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"weighted_sum: operand shapes differ: {shape} vs {t.shape}")
    dtype = tensors[0].data.dtype
    w = weights.data.astype(dtype, copy=False)
    out = np.zeros(shape, dtype=dtype)
    for wk, t in zip(w, tensors):
        if wk != 0:
            out += wk * t.data

    def backward(g):
        grads = [g * wk for wk in w]
        dw = np.array([np.vdot(g, t.data) for t in tensors], dtype=weights.data.dtype)
        return (*grads, dw)

    return Tensor._from_op(out, (*tensors, weights), backward, "weighted_sum")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


# -- reductions and reshaping --------------------------------------------------


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Tensor._from_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full_like(x.data, g),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.size
    return Tensor._from_op(
        np.asarray(x.data.mean(), dtype=x.dtype), (x,), lambda g: (np.full_like(x.data, g / n),), "mean"
    )


def dot(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("dot", a, b)
    return Tensor._from_op(
        np.asarray(np.vdot(a.data, b.data), dtype=a.dtype), (a, b), lambda g: (g * b.data, g * a.data), "dot"
    )


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) for p in parts)


def getitem(x: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(np.array(x.data[index]), (x,), backward, "getitem")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis."""
    if not tensors:
        raise ValueError("concat_channels: need at least one tensor")
    ref = tensors[0].shape
    for t in tensors:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"concat_channels: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), backward, "concat")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    scale = 1.0 / (h * w)

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] * scale, x.shape).astype(x.dtype),)

    return Tensor._from_op(x.data.mean(axis=(2, 3)), (x,), backward, "global_avg_pool")


# -- dense layers --------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with x [N, D], weight [K, D], bias [K]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape} (need [N,D] and [K,D])")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor._from_op(out, parents, backward, "linear")


def softmax(logits: Tensor) -> Tensor:
    """Softmax of a 1-D logit vector, max-shifted for stability."""
    if logits.ndim != 1:
        raise ValueError(f"softmax expects a vector, got shape {logits.shape}")
    if logits.size == 0:
        raise ValueError("softmax of an empty vector")
    z = logits.data - logits.data.max()
    e = np.exp(z)
    y = e / e.sum()
    return Tensor._from_op(y, (logits,), lambda g: (y * (g - np.vdot(g, y)),), "softmax")


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects [N, K] logits, got {logits.shape}")
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    logp = log_softmax_rows(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return Tensor._from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


# -- convolution and pooling ---------------------------------------------------


def _out_size(size, k, stride, padding, dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _pad(x, padding, value=0.0):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _crop(xp, padding):
    if padding == 0:
        return xp
    return xp[:, :, padding:-padding, padding:-padding]


def _dense_conv_forward(xp, w, stride, dilation, out_h, out_w):
    n = xp.shape[0]
    f, c, k, _ = w.shape
    w2 = w.reshape(f, c * k * k)
    if k == 1 and stride == 1:
        cols = xp.reshape(n, c, -1)
    else:
        cols = kernels.im2col(_contig(xp), k, stride, dilation, out_h, out_w).reshape(n, c * k * k, -1)
    return np.matmul(w2, cols).reshape(n, f, out_h, out_w), cols


def _dense_conv_backward(g, xp_shape, w, cols, stride, dilation):
    n = g.shape[0]
    f, c, k, _ = w.shape
    out_h, out_w = g.shape[2:]
    g2 = g.reshape(n, f, -1)
    dw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dcols = np.matmul(w.reshape(f, -1).T, g2)
    if k == 1 and stride == 1:
        dxp = dcols.reshape(xp_shape)
    else:
        dxp = kernels.col2im(_contig(dcols.reshape(n, c, k, k, out_h, out_w)), xp_shape[2], xp_shape[3], stride, dilation)
    return dxp, dw


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation of NCHW ``x`` with weight [F, C/groups, k, k]."""
    if x.ndim != 4:
        raise ValueError(f"conv2d: input must be [N,C,H,W], got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"conv2d: weight must be [F,C/groups,k,k] with square kernel, got {weight.shape}")
    n, c, h, w = x.shape
    f, cg, k, _ = weight.shape
    if groups < 1 or c % groups:
        raise ValueError(f"conv2d: groups={groups} does not divide input channels C={c}")
    if f % groups:
        raise ValueError(f"conv2d: groups={groups} does not divide output channels F={f}")
    if cg != c // groups:
        raise ValueError(f"conv2d: input has C={c} channels, weight dim 1 is {cg} but C/groups={c // groups}")
    if k < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid k={k}, stride={stride}, dilation={dilation}, padding={padding}")
    out_h = _out_size(h, k, stride, padding, dilation)
    out_w = _out_size(w, k, stride, padding, dilation)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"conv2d: kernel (k={k}, dilation={dilation}) larger than padded input {h}x{w}")
    if bias is not None and bias.shape != (f,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({f},)")

    xp = _pad(x.data, padding)
    wd = weight.data.astype(xp.dtype, copy=False)
    depthwise = groups == c and f == c
    if depthwise:
        out = kernels.depthwise_conv(_contig(xp), _contig(wd[:, 0]), stride, dilation, out_h, out_w)
        saved = None
    elif groups == 1:
        out, saved = _dense_conv_forward(xp, wd, stride, dilation, out_h, out_w)
    else:
        fg = f // groups
        parts, saved = [], []
        for gi in range(groups):
            o, cols = _dense_conv_forward(
                xp[:, gi * cg:(gi + 1) * cg], wd[gi * fg:(gi + 1) * fg], stride, dilation, out_h, out_w
            )
            parts.append(o)
            saved.append(cols)
        out = np.concatenate(parts, axis=1)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g = _contig(g)
        if depthwise:
            dxp, dw = kernels.depthwise_conv_grad(_contig(xp), _contig(wd[:, 0]), g, stride, dilation)
            dw = dw[:, None]
        elif groups == 1:
            dxp, dw = _dense_conv_backward(g, xp.shape, wd, saved, stride, dilation)
        else:
            fg = f // groups
            dxp = np.zeros_like(xp)
            dw = np.zeros_like(wd)
            for gi in range(groups):
                d_x, d_w = _dense_conv_backward(
                    g[:, gi * fg:(gi + 1) * fg], (n, cg) + xp.shape[2:], wd[gi * fg:(gi + 1) * fg], saved[gi], stride, dilation
                )
                dxp[:, gi * cg:(gi + 1) * cg] = d_x
                dw[gi * fg:(gi + 1) * fg] = d_w
        grads = [_crop(dxp, padding), dw.astype(weight.dtype, copy=False)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, backward, "conv2d")


def pool2d(x: Tensor, kind: str, k: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Max or average pooling over k x k windows.

    Average pooling divides by ``k*k`` everywhere (padding counts as zeros).
    Max pooling pads with -inf and routes gradient to the first maximum.
    """
    if x.ndim != 4:
        raise ValueError(f"pool2d: input must be [N,C,H,W], got shape {x.shape}")
    if k < 1 or stride < 1 or padding < 0:
        raise ValueError(f"pool2d: invalid k={k}, stride={stride}, padding={padding}")
    n, c, h, w = x.shape
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ValueError(f"pool2d: window {k}x{k} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    out_h = _out_size(h, k, stride, padding, 1)
    out_w = _out_size(w, k, stride, padding, 1)
    if kind == "max":
        xp = _contig(_pad(x.data, padding, value=-np.inf))
        out, idx = kernels.maxpool(xp, k, stride, out_h, out_w)

        def backward(g):
            dxp = kernels.maxpool_grad(_contig(g), idx, k, stride, xp.shape[2], xp.shape[3])
            return (_crop(dxp, padding),)

    elif kind == "avg":
        xp = _contig(_pad(x.data, padding))
        wavg = np.full((c, k, k), 1.0 / (k * k), dtype=xp.dtype)
        out = kernels.depthwise_conv(xp, wavg, stride, 1, out_h, out_w)

        def backward(g):
            dxp, _ = kernels.depthwise_conv_grad(xp, wavg, _contig(g), stride, 1)
            return (_crop(dxp, padding),)

    else:
        raise ValueError(f"pool2d: kind must be 'max' or 'avg', got {kind!r}")
    return Tensor._from_op(out, (x,), backward, f"{kind}_pool2d")


# -- normalisation -------------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation of NCHW input.

    In training mode batch statistics are used and the running buffers (if
    given) are updated in place with the unbiased variance.
    """
    if x.ndim != 4:
        raise ValueError(f"batch_norm expects [N,C,H,W], got shape {x.shape}")
    n, c, h, w = x.shape
    if (gamma is None) != (beta is None):
        raise ValueError("batch_norm: pass both gamma and beta or neither")
    affine = gamma is not None
    if training:
        if n < 2:
            raise ValueError(f"batch_norm in training mode needs batch size >= 2, got {n}")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None:
            m = n * h * w
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * (m / max(m - 1, 1))
    else:
        if running_mean is None:
            raise ValueError("batch_norm in eval mode needs running statistics")
        mu, var = running_mean, running_var
    dtype = x.data.dtype
    inv_std = (1.0 / np.sqrt(var + eps)).astype(dtype)
    xhat = (x.data - mu[None, :, None, None].astype(dtype)) * inv_std[None, :, None, None]
    if affine:
        out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
        parents = (x, gamma, beta)
    else:
        out = xhat
        parents = (x,)

    def backward(g):
        dxhat = g * gamma.data[None, :, None, None] if affine else g
        if training:
            m = n * h * w
            s1 = dxhat.sum(axis=(0, 2, 3))
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
            dx = (inv_std / m)[None, :, None, None] * (
                m * dxhat - s1[None, :, None, None] - xhat * s2[None, :, None, None]
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        grads = [dx.astype(dtype, copy=False)]
        if affine:
            grads.append((g * xhat).sum(axis=(0, 2, 3)).astype(gamma.dtype))
            grads.append(g.sum(axis=(0, 2, 3)).astype(beta.dtype))
        return grads

    return Tensor._from_op(out.astype(dtype, copy=False), parents, backward, "batch_norm")
