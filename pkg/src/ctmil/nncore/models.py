"""Encoder and decoder parameter containers with forward/backward passes.

Two encoder families are provided:

* ``lenet5``: conv(3->6, 5x5) -> tanh -> avgpool -> conv(6->16, 5x5)
  -> tanh -> avgpool -> flatten -> affine(400->120) -> tanh
  -> affine(120->M)
* ``vggs``: four 3x3 conv blocks 3->32->64->128->128, relu + maxpool
  between blocks, then affine(512->M); a reduced stack keeping the
  VGG shape at 32x32 input scale.

Patch pixels are grayscale replicated onto three channels, so a
single-channel batch is accepted as a fast path: the first conv then
runs with its kernels summed over the channel axis, which computes the
same function (and channel gradients are shared).

The decoder maps a conditioned embedding plus the 6-component transform
encoding back to a 32x32x3 patch via an affine layer and two stride-2
transposed convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from . import layers as L

PATCH = 32
IN_CHANNELS = 3
TRANSFORM_DIM = 6

ARCHS = ("lenet5", "vggs")


@dataclass
class EncoderParams:
    """Named tensors of a patch encoder plus its architecture tag."""

    arch: str
    embed_dim: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.arch, self.embed_dim,
                             {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class DecoderParams:
    embed_dim: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.embed_dim,
                             {k: v.copy() for k, v in self.tensors.items()})


def encoder_tensor_shapes(arch: str, embed_dim: int) -> dict[str, tuple[int, ...]]:
    if arch == "lenet5":
        return {
            "conv1.w": (6, IN_CHANNELS, 5, 5), "conv1.b": (6,),
            "conv2.w": (16, 6, 5, 5), "conv2.b": (16,),
            "fc1.w": (400, 120), "fc1.b": (120,),
            "fc2.w": (120, embed_dim), "fc2.b": (embed_dim,),
        }
    if arch == "vggs":
        return {
            "conv1.w": (32, IN_CHANNELS, 3, 3), "conv1.b": (32,),
            "conv2.w": (64, 32, 3, 3), "conv2.b": (64,),
            "conv3.w": (128, 64, 3, 3), "conv3.b": (128,),
            "conv4.w": (128, 128, 3, 3), "conv4.b": (128,),
            "fc.w": (512, embed_dim), "fc.b": (embed_dim,),
        }
    raise ConfigError(f"unknown encoder arch {arch!r}, expected one of {ARCHS}")


def init_encoder(arch: str, embed_dim: int, rng: np.random.Generator,
                 dtype=np.float32) -> EncoderParams:
    """Kaiming-uniform fan-in weights, zero biases."""
    if embed_dim <= 0:
        raise ConfigError(f"embed_dim must be positive, got {embed_dim}")
    tensors = {}
    for name, shape in encoder_tensor_shapes(arch, embed_dim).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            tensors[name] = L.kaiming_uniform(shape, fan_in, rng, dtype)
    return EncoderParams(arch=arch, embed_dim=embed_dim, tensors=tensors)


def _first_conv_weight(w: np.ndarray, channels: int) -> np.ndarray:
    if channels == IN_CHANNELS:
        return w
    if channels == 1:
        return w.sum(axis=1, keepdims=True)
    raise ConfigError(f"encoder input must have 1 or 3 channels, got {channels}")


def _first_conv_wgrad(dw: np.ndarray, channels: int) -> np.ndarray:
    if channels == IN_CHANNELS:
        return dw
    return np.repeat(dw, IN_CHANNELS, axis=1)


def encoder_forward(params: EncoderParams, x: np.ndarray, want_cache=False):
    """x is (B, C, 32, 32) with C in {1, 3}; returns (h, cache)."""
    t = params.tensors
    channels = x.shape[1]
    if params.arch == "lenet5":
        w1 = _first_conv_weight(t["conv1.w"], channels)
        a1, c1 = L.conv2d_forward(x, w1, t["conv1.b"])
        z1, cz1 = L.tanh_forward(a1)
        p1, cp1 = L.avgpool2_forward(z1)
        a2, c2 = L.conv2d_forward(p1, t["conv2.w"], t["conv2.b"])
        z2, cz2 = L.tanh_forward(a2)
        p2, cp2 = L.avgpool2_forward(z2)
        flat = p2.reshape(p2.shape[0], -1)
        a3, c3 = L.affine_forward(flat, t["fc1.w"], t["fc1.b"])
        z3, cz3 = L.tanh_forward(a3)
        h, c4 = L.affine_forward(z3, t["fc2.w"], t["fc2.b"])
        cache = (channels, c1, cz1, cp1, c2, cz2, cp2, p2.shape, c3, cz3, c4) \
            if want_cache else None
        return h, cache
    if params.arch == "vggs":
        caches = [channels]
        out = x
        for i in (1, 2, 3, 4):
            w = t[f"conv{i}.w"] if i > 1 else _first_conv_weight(t["conv1.w"], channels)
            a, cc = L.conv2d_forward(out, w, t[f"conv{i}.b"], pad=1)
            z, cr = L.relu_forward(a)
            out, cp = L.maxpool2_forward(z)
            caches.extend((cc, cr, cp))
        shape = out.shape
        flat = out.reshape(shape[0], -1)
        h, ca = L.affine_forward(flat, t["fc.w"], t["fc.b"])
        caches.extend((shape, ca))
        return h, tuple(caches) if want_cache else None
    raise ConfigError(f"unknown encoder arch {params.arch!r}")


def encoder_backward(params: EncoderParams, cache, dh: np.ndarray):
    """Gradients of a scalar loss w.r.t. every encoder tensor, given dh."""
    t = params.tensors
    grads = {}
    if params.arch == "lenet5":
        channels, c1, cz1, cp1, c2, cz2, cp2, p2shape, c3, cz3, c4 = cache
        dz3, grads["fc2.w"], grads["fc2.b"] = L.affine_backward(dh, c4)
        da3 = L.tanh_backward(dz3, cz3)
        dflat, grads["fc1.w"], grads["fc1.b"] = L.affine_backward(da3, c3)
        dp2 = dflat.reshape(p2shape)
        dz2 = L.avgpool2_backward(dp2, cp2)
        da2 = L.tanh_backward(dz2, cz2)
        dp1, grads["conv2.w"], grads["conv2.b"] = L.conv2d_backward(da2, c2)
        dz1 = L.avgpool2_backward(dp1, cp1)
        da1 = L.tanh_backward(dz1, cz1)
        _, dw1, grads["conv1.b"] = L.conv2d_backward(da1, c1)
        grads["conv1.w"] = _first_conv_wgrad(dw1, channels)
        return grads
    if params.arch == "vggs":
        channels = cache[0]
        shape, ca = cache[13], cache[14]
        dflat, grads["fc.w"], grads["fc.b"] = L.affine_backward(dh, ca)
        dout = dflat.reshape(shape)
        for i in (4, 3, 2, 1):
            cc, cr, cp = cache[3 * i - 2], cache[3 * i - 1], cache[3 * i]
            dz = L.maxpool2_backward(dout, cp)
            da = L.relu_backward(dz, cr)
            dout, dw, grads[f"conv{i}.b"] = L.conv2d_backward(da, cc)
            grads[f"conv{i}.w"] = dw if i > 1 else _first_conv_wgrad(dw, channels)
        return grads
    raise ConfigError(f"unknown encoder arch {params.arch!r}")


def _to_nchw(instances: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(instances)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != (PATCH, PATCH, IN_CHANNELS):
        raise ConfigError(
            f"expected instances of shape (32, 32, 3), got {x.shape[1:]}"
        )
    return np.moveaxis(x, -1, 1), single


def encode(params: EncoderParams, instances) -> np.ndarray:
    """Embed one (32, 32, 3) instance or a (B, 32, 32, 3) batch."""
    data = getattr(instances, "data", instances)
    x, single = _to_nchw(data)
    h, _ = encoder_forward(params, x)
    return h[0] if single else h


# --- decoder -------------------------------------------------------------------

def decoder_tensor_shapes(embed_dim: int) -> dict[str, tuple[int, ...]]:
    return {
        "fc.w": (embed_dim + TRANSFORM_DIM, 512), "fc.b": (512,),
        "up1.w": (8, 8, 2, 2), "up1.b": (8,),
        "up2.w": (8, IN_CHANNELS, 2, 2), "up2.b": (IN_CHANNELS,),
    }


def init_decoder(embed_dim: int, rng: np.random.Generator,
                 dtype=np.float32) -> DecoderParams:
    tensors = {}
    for name, shape in decoder_tensor_shapes(embed_dim).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            # transposed-conv fan-in counts the input-channel taps
            fan_in = shape[0] if len(shape) == 2 else shape[0] * shape[2] * shape[3]
            tensors[name] = L.kaiming_uniform(shape, fan_in, rng, dtype)
    return DecoderParams(embed_dim=embed_dim, tensors=tensors)


def decoder_forward(params: DecoderParams, h: np.ndarray, tvec: np.ndarray,
                    want_cache=False):
    """h (B, M) conditioned embedding, tvec (B, 6) -> (B, 3, 32, 32).

    tanh activations keep the whole path smooth, so finite differences
    stay a valid oracle for the analytic gradients. The upsampling
    stages are non-overlapping transposed convolutions (kernel 2,
    stride 2), which reduce to one matrix product each.
    """
    t = params.tensors
    tvec = tvec.astype(h.dtype, copy=False)
    z = np.concatenate([h, tvec], axis=1)
    a0, c0 = L.affine_forward(z, t["fc.w"], t["fc.b"])
    r0, cr0 = L.tanh_forward(a0)
    grid = r0.reshape(r0.shape[0], 8, 8, 8)
    a1, c1 = L.convT2x2_forward(grid, t["up1.w"], t["up1.b"])
    r1, cr1 = L.tanh_forward(a1)
    y, c2 = L.convT2x2_forward(r1, t["up2.w"], t["up2.b"])
    cache = (h.shape[1], c0, cr0, grid.shape, c1, cr1, c2) if want_cache else None
    return y, cache


def decoder_backward(params: DecoderParams, cache, dy: np.ndarray):
    """Returns (dh, grads); the transform encoding is a constant input."""
    m, c0, cr0, gridshape, c1, cr1, c2 = cache
    grads = {}
    dr1, grads["up2.w"], grads["up2.b"] = L.convT2x2_backward(dy, c2)
    da1 = L.tanh_backward(dr1, cr1)
    dgrid, grads["up1.w"], grads["up1.b"] = L.convT2x2_backward(da1, c1)
    dr0 = dgrid.reshape(dgrid.shape[0], -1)
    da0 = L.tanh_backward(dr0, cr0)
    dz, grads["fc.w"], grads["fc.b"] = L.affine_backward(da0, c0)
    return dz[:, :m], grads


def decode(params: DecoderParams, h, tvec) -> np.ndarray:
    """Reconstruct a 32x32x3 patch (or batch) from an embedding and the
    transform encoding of its target."""
    h = np.asarray(h)
    enc = getattr(tvec, "encoding", tvec)
    enc = np.asarray(enc)
    single = h.ndim == 1
    if single:
        h = h[None]
        enc = enc[None] if enc.ndim == 1 else enc
    y, _ = decoder_forward(params, h, enc)
    y = np.moveaxis(y, 1, -1)
    return y[0] if single else y
