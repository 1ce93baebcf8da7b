"""Graph convolution layers over a dense normalized adjacency."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import BatchNorm, Module, uniform_fan_in
from .scg import symmetric_normalize


class GCNLayer(Module):
    def __init__(self, d_in, d_out, use_relu=False, use_batchnorm=False, rng=None, dtype=None):
        dtype = dtype or T.DEFAULT_DTYPE
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in = d_in
        self.d_out = d_out
        self.use_relu = use_relu
        self.use_batchnorm = use_batchnorm
        self.theta = uniform_fan_in(rng, (d_in, d_out), d_in, dtype)
        self.bn = BatchNorm(d_out, dtype=dtype) if use_batchnorm else None

    def __call__(self, a_hat, x):
        return gcn_layer(a_hat, x, self)


def normalize_adjacency(a):
    """D^-1/2 (A + I) D^-1/2 for a (batched) square nonnegative adjacency."""
    a = T.as_tensor(a)
    n = a.shape[-1]
    if a.ndim < 2 or a.shape[-2] != n:
        raise T.ShapeError(f"adjacency must be square, got {a.shape}")
    return symmetric_normalize(a + T.eye(n, dtype=a.dtype))


def gcn_layer(a_hat, x, layer):
    """act(BN(A_hat @ X @ theta)); batch norm treats every node as a sample."""
    a_hat, x = T.as_tensor(a_hat), T.as_tensor(x)
    if x.shape[-1] != layer.d_in:
        raise T.ShapeError(f"gcn layer expects {layer.d_in} input features, got {x.shape[-1]}")
    if a_hat.shape[-1] != x.shape[-2]:
        raise T.ShapeError(f"adjacency {a_hat.shape} does not match node features {x.shape}")
    h = T.matmul(T.matmul(a_hat, x), layer.theta)
    if layer.use_batchnorm:
        shape = h.shape
        h = T.reshape(layer.bn(T.reshape(h, (-1, layer.d_out))), shape)
    if layer.use_relu:
        h = T.relu(h)
    return h


def gcn_stack(a_hat, x, layers):
    for prev, nxt in zip(layers, layers[1:]):
        if prev.d_out != nxt.d_in:
            raise T.ShapeError(f"gcn layer widths do not chain: {prev.d_out} -> {nxt.d_in}")
    h = T.as_tensor(x)
    for layer in layers:
        h = gcn_layer(a_hat, h, layer)
    return h
