"""Convolution, pooling, upsampling and batch normalization on top of the tape."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .tensor import ShapeError, Tensor, _make, _op


# -- parameter containers ------------------------------------------------------

class Module:
    """Minimal parameter container.

    Parameters are ``Tensor`` attributes with ``requires_grad``; buffers are
    plain numpy arrays listed in ``_buffers``. Child modules are attributes or
    lists of modules.
    """

    training = True
    _buffers: tuple[str, ...] = ()

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def set_buffer(self, dotted, value):
        head, _, rest = dotted.partition(".")
        if not rest:
            setattr(self, head, value)
            return
        child = getattr(self, head)
        if isinstance(child, (list, tuple)):
            idx, _, rest = rest.partition(".")
            child = child[int(idx)]
        child.set_buffer(rest, value)

    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def uniform_fan_in(rng, shape, fan_in, dtype):
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=None, rng=None, zero_init=False, dtype=None):
        dtype = dtype or T.DEFAULT_DTYPE
        if padding is None:
            padding = (kernel - 1) // 2
        self.stride = stride
        self.padding = padding
        shape = (out_ch, in_ch, kernel, kernel)
        if zero_init:
            self.weight = T.zeros(shape, requires_grad=True, dtype=dtype)
            self.bias = T.zeros((out_ch,), requires_grad=True, dtype=dtype)
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            fan_in = in_ch * kernel * kernel
            self.weight = uniform_fan_in(rng, shape, fan_in, dtype)
            self.bias = uniform_fan_in(rng, (out_ch,), fan_in, dtype)

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=None):
        dtype = dtype or T.DEFAULT_DTYPE
        self.momentum = momentum
        self.eps = eps
        self.scale = T.ones((channels,), requires_grad=True, dtype=dtype)
        self.shift = T.zeros((channels,), requires_grad=True, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x):
        return batchnorm(x, self)


# -- convolution -----------------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (b, c, h, w) with ``weight`` (o, c, kh, kw)."""
    x, weight = T.as_tensor(x), T.as_tensor(weight)
    b, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ci}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"input {h}x{w} smaller than kernel {kh}x{kw} after padding")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    wd = weight.data
    out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    parents = [x, weight]
    if bias is not None:
        bias = T.as_tensor(bias)
        out = out + bias.data.reshape(1, o, 1, 1)
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def backward(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        gx = None
        if x.requires_grad:
            gwin = np.tensordot(g, wd, axes=([1], [0]))  # b, ho, wo, c, kh, kw
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gwin[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return _make(out, parents, backward, _op("conv2d"))


# -- separable resampling (pooling / upsampling) -------------------------------------

def pool_matrix(size_in, size_out, dtype=np.float64):
    if size_out > size_in:
        raise ShapeError(f"adaptive pooling cannot enlarge {size_in} -> {size_out}")
    m = np.zeros((size_out, size_in), dtype=dtype)
    for i in range(size_out):
        lo = (i * size_in) // size_out
        hi = -((-(i + 1) * size_in) // size_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def bilinear_matrix(size_in, size_out, dtype=np.float64):
    """Interpolation weights for align_corners=False bilinear resizing."""
    if size_out < size_in:
        raise ShapeError(f"bilinear_upsample cannot downscale {size_in} -> {size_out}")
    m = np.zeros((size_out, size_in), dtype=dtype)
    scale = size_in / size_out
    for i in range(size_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), size_in - 1)
        i1 = min(i0 + 1, size_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def _resample(x, mh, mw, name):
    x = T.as_tensor(x)
    mh = mh.astype(x.data.dtype, copy=False)
    mw = mw.astype(x.data.dtype, copy=False)
    out = mh @ x.data @ mw.T
    return _make(out, (x,), lambda g: (mh.T @ g @ mw,), name)


def adaptive_avg_pool(x, out_h, out_w):
    x = T.as_tensor(x)
    h, w = x.shape[-2:]
    return _resample(x, pool_matrix(h, out_h), pool_matrix(w, out_w), _op("adaptive_avg_pool"))


def bilinear_upsample(x, out_h, out_w):
    x = T.as_tensor(x)
    h, w = x.shape[-2:]
    return _resample(x, bilinear_matrix(h, out_h), bilinear_matrix(w, out_w), _op("bilinear_upsample"))


# -- batch normalization -------------------------------------------------------------

def batchnorm(x, bn):
    """Normalize over every axis except axis 1 (channels).

    Accepts (b, c, h, w) feature maps or (m, c) rows.
    """
    x = T.as_tensor(x)
    c = bn.scale.shape[0]
    if x.ndim < 2 or x.shape[1] != c:
        raise ShapeError(f"batchnorm expects {c} channels on axis 1, got shape {x.shape}")
    axes = tuple(i for i in range(x.ndim) if i != 1)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    if bn.training:
        mu = T.mean(x, axes, keepdims=True)
        centered = x - mu
        var = T.mean(T.square(centered), axes, keepdims=True)
        xhat = centered / T.sqrt(var + bn.eps)
        count = x.data.size // c
        m = bn.momentum
        bn.running_mean = ((1 - m) * bn.running_mean + m * mu.data.reshape(c)).astype(bn.running_mean.dtype)
        unbiased = var.data.reshape(c) * count / max(count - 1, 1)
        bn.running_var = ((1 - m) * bn.running_var + m * unbiased).astype(bn.running_var.dtype)
    else:
        mu = bn.running_mean.reshape(bshape).astype(x.data.dtype)
        sd = np.sqrt(bn.running_var.reshape(bshape) + bn.eps).astype(x.data.dtype)
        xhat = (x - mu) / sd
    return xhat * T.reshape(bn.scale, bshape) + T.reshape(bn.shift, bshape)
