"""Differentiable layer primitives on numpy arrays.

Every layer comes as a forward returning (output, cache) and a backward
consuming (grad_output, cache). Data layout is NCHW for spatial layers.
All functions preserve the input dtype, so the same code runs the
float32 training path and the float64 gradient-check path.

Convolutions are expressed as batched matrix products over an im2col
buffer in (B, C*kh*kw, OH*OW) layout; the buffer is built with per-tap
slice copies, which profiled far ahead of fancy-indexing variants at
this kernel size.
"""

from __future__ import annotations

import numpy as np


# --- elementwise activations --------------------------------------------------

def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, cache):
    y = cache
    return dy * (1.0 - y * y)


def relu_forward(x):
    y = np.maximum(x, 0)
    return y, x


def relu_backward(dy, cache):
    x = cache
    return np.where(x > 0, dy, 0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_forward(x):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(dy, cache):
    y = cache
    return dy * y * (1.0 - y)


# --- dense --------------------------------------------------------------------

def affine_forward(x, w, b):
    """y = x @ w + b with x (B, In), w (In, Out), b (Out,)."""
    return x @ w + b, (x, w)


def affine_backward(dy, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.T @ dy
    db = dy.sum(axis=0)
    return dx, dw, db


def l2normalize_forward(x, eps=0.0):
    """Row-wise unit normalization of x (B, D).

    Raises on a zero-norm row: downstream similarity losses are
    undefined there.
    """
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise FloatingPointError("cannot normalize a zero-norm feature row")
    y = x / norms
    return y, (y, norms)


def l2normalize_backward(dy, cache):
    y, norms = cache
    return (dy - y * (dy * y).sum(axis=1, keepdims=True)) / norms


# --- convolution --------------------------------------------------------------

def _im2col(x, kh, kw):
    """x (B, C, H, W) -> columns (B, C*kh*kw, OH*OW), stride 1."""
    b, c, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + oh, j:j + ow]
    return cols.reshape(b, c * kh * kw, oh * ow), (oh, ow)


def _col2im(dcols, shape, kh, kw):
    """Adjoint of _im2col: scatter-add columns back onto (B, C, H, W)."""
    b, c, h, w = shape
    oh, ow = h - kh + 1, w - kw + 1
    dx = np.zeros(shape, dtype=dcols.dtype)
    dc = dcols.reshape(b, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + oh, j:j + ow] += dc[:, :, i, j]
    return dx


def conv2d_forward(x, w, b, pad=0):
    """Stride-1 cross-correlation: x (B,C,H,W), w (F,C,kh,kw), b (F,)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    bsz, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    cols, (oh, ow) = _im2col(x, kh, kw)
    y = np.matmul(w.reshape(f, -1)[None], cols)  # (B, F, OH*OW)
    y += b[None, :, None]
    y = y.reshape(bsz, f, oh, ow)
    return y, (cols, x.shape, w, pad)


def conv2d_backward(dy, cache):
    cols, xshape, w, pad = cache
    bsz, f, oh, ow = dy.shape
    kh, kw = w.shape[2], w.shape[3]
    dyr = dy.reshape(bsz, f, oh * ow)
    dw = np.matmul(dyr, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dyr.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(f, -1).T[None], dyr)  # (B, C*kh*kw, OH*OW)
    dx = _col2im(dcols, xshape, kh, kw)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx, dw, db


def conv2dT_forward(x, w, b, stride=2, pad=1):
    """Transposed convolution: x (B,C,H,W), w (C,F,kh,kw), b (F,).

    Output spatial size is stride*(H-1) + kh - 2*pad.
    """
    bsz, c, h, wd = x.shape
    _, f, kh, kw = w.shape
    # every input pixel smears a kh*kw*F patch into the (strided) output
    contrib = np.matmul(w.reshape(c, -1).T[None], x.reshape(bsz, c, h * wd))
    contrib = contrib.reshape(bsz, f, kh, kw, h, wd)
    full_h = stride * (h - 1) + kh
    full_w = stride * (wd - 1) + kw
    full = np.zeros((bsz, f, full_h, full_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * h:stride, j:j + stride * wd:stride] += \
                contrib[:, :, i, j]
    y = full[:, :, pad:full_h - pad, pad:full_w - pad] if pad else full
    y = y + b[None, :, None, None]
    return y, (x, w, stride, pad, (full_h, full_w))


def conv2dT_backward(dy, cache):
    x, w, stride, pad, (full_h, full_w) = cache
    bsz, c, h, wd = x.shape
    _, f, kh, kw = w.shape
    dfull = np.zeros((bsz, f, full_h, full_w), dtype=dy.dtype)
    if pad:
        dfull[:, :, pad:full_h - pad, pad:full_w - pad] = dy
    else:
        dfull = dy.copy()
    dcontrib = np.empty((bsz, f, kh, kw, h, wd), dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dcontrib[:, :, i, j] = \
                dfull[:, :, i:i + stride * h:stride, j:j + stride * wd:stride]
    dcontrib = dcontrib.reshape(bsz, f * kh * kw, h * wd)
    dx = np.matmul(w.reshape(c, -1)[None], dcontrib).reshape(x.shape)
    dw = np.matmul(x.reshape(bsz, c, h * wd), dcontrib.transpose(0, 2, 1))
    dw = dw.sum(axis=0).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


def convT2x2_forward(x, w, b):
    """Non-overlapping transposed conv, kernel 2, stride 2, no padding.

    Every input pixel expands into its own 2x2 output block, so the op
    is one matrix product plus a pixel-shuffle: x (B,C,H,W), w (C,F,2,2)
    -> (B,F,2H,2W).
    """
    bsz, c, h, wd = x.shape
    f = w.shape[1]
    xmat = x.transpose(0, 2, 3, 1).reshape(bsz * h * wd, c)
    y = xmat @ w.reshape(c, f * 4)
    y = y.reshape(bsz, h, wd, f, 2, 2).transpose(0, 3, 1, 4, 2, 5)
    y = y.reshape(bsz, f, 2 * h, 2 * wd)
    y += b[None, :, None, None]
    return y, (xmat, w, x.shape)


def convT2x2_backward(dy, cache):
    xmat, w, (bsz, c, h, wd) = cache
    f = w.shape[1]
    dyr = dy.reshape(bsz, f, h, 2, wd, 2).transpose(0, 2, 4, 1, 3, 5)
    dyr = dyr.reshape(bsz * h * wd, f * 4)
    dx = (dyr @ w.reshape(c, f * 4).T).reshape(bsz, h, wd, c).transpose(0, 3, 1, 2)
    dw = (xmat.T @ dyr).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    return dx, dw, db


# --- 2x2 pooling, stride 2 ----------------------------------------------------

def avgpool2_forward(x):
    b, c, h, w = x.shape
    y = x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return y, x.shape


def avgpool2_backward(dy, cache):
    b, c, h, w = cache
    dx = np.empty((b, c, h, w), dtype=dy.dtype)
    dx.reshape(b, c, h // 2, 2, w // 2, 2)[:] = \
        (dy * 0.25)[:, :, :, None, :, None]
    return dx


def maxpool2_forward(x):
    b, c, h, w = x.shape
    quads = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    quads = quads.reshape(b, c, h // 2, w // 2, 4)
    idx = quads.argmax(axis=-1)
    y = np.take_along_axis(quads, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_backward(dy, cache):
    idx, (b, c, h, w) = cache
    dquads = np.zeros((b, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(dquads, idx[..., None], dy[..., None], axis=-1)
    dquads = dquads.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dquads.reshape(b, c, h, w)


# --- initialization -----------------------------------------------------------

def kaiming_uniform(shape, fan_in, rng, dtype=np.float32):
    """Uniform fan-in init, bound sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
