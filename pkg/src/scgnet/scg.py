"""Self-constructing graph: learn a weighted adjacency from a feature map.

All functions accept a leading batch axis. Adjacency-level quantities (the
adaptive factor, both regularizers) are computed per sample; the scalar
losses are averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module, adaptive_avg_pool
from .tensor import EPS, Tensor


@dataclass
class GaussianParams:
    mu: Tensor         # (b, n, c)
    log_sigma: Tensor  # (b, n, c)

    @property
    def sigma(self):
        return T.exp(self.log_sigma)


@dataclass
class LatentState:
    z: Tensor
    z_hat: Tensor
    noise: np.ndarray


@dataclass
class GraphState:
    a_raw: Tensor          # (b, n, n)
    a_norm: Tensor         # (b, n, n)
    node_features: Tensor  # (b, n, d)
    gamma: Tensor          # (b,)

    @property
    def n(self):
        return self.a_raw.shape[-1]


@dataclass
class SCGOutput:
    graph: GraphState
    y_hat: Tensor  # (b, n, c)
    kl: Tensor
    dl: Tensor
    gaussian: GaussianParams
    latent: LatentState


class SCG(Module):
    """Encoder convolutions plus the node-grid geometry."""

    def __init__(self, in_ch, n_classes, node_h, node_w, rng=None, dtype=None):
        self.node_h = node_h
        self.node_w = node_w
        self.mu_conv = Conv2d(in_ch, n_classes, 3, rng=rng, dtype=dtype)
        # zero init gives sigma = 1 at the start of training
        self.log_sigma_conv = Conv2d(in_ch, n_classes, 1, zero_init=True, dtype=dtype)

    def __call__(self, x, training=None, rng=None, noise=None):
        training = self.training if training is None else training
        return scg_forward(x, self, training, rng=rng, noise=noise)


def pool_to_nodes(x, node_h, node_w):
    """(b, d, h, w) -> (b, n, d) with n = node_h * node_w, row-major node order."""
    pooled = adaptive_avg_pool(x, node_h, node_w)
    b, d = pooled.shape[:2]
    return T.transpose(T.reshape(pooled, (b, d, node_h * node_w)), (0, 2, 1))


def _nodes_to_grid(x, node_h, node_w):
    b, n, d = x.shape
    if n != node_h * node_w:
        raise T.ShapeError(f"{n} nodes do not fill a {node_h}x{node_w} grid")
    return T.reshape(T.transpose(x, (0, 2, 1)), (b, d, node_h, node_w))


def _grid_to_nodes(x):
    b, c, h, w = x.shape
    return T.transpose(T.reshape(x, (b, c, h * w)), (0, 2, 1))


def encode(x_nodes, mu_conv, log_sigma_conv, node_h, node_w):
    grid = _nodes_to_grid(x_nodes, node_h, node_w)
    return GaussianParams(_grid_to_nodes(mu_conv(grid)), _grid_to_nodes(log_sigma_conv(grid)))


def reparameterize(g, training, rng=None, noise=None):
    """z = mu + sigma * noise (noise is zero outside training); z_hat = mu * (1 - log sigma)."""
    if not training:
        noise = np.zeros(g.mu.shape, dtype=g.mu.dtype)
    elif noise is None:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.standard_normal(g.mu.shape).astype(g.mu.dtype)
    z = g.mu + g.sigma * noise
    z_hat = g.mu * (1.0 - g.log_sigma)
    return LatentState(z, z_hat, noise)


def kl_loss(g):
    """-(1/2n) * sum over nodes and channels of (1 + log sigma^2 - mu^2 - sigma^2), batch-averaged."""
    n = g.mu.shape[-2]
    two_ls = 2.0 * g.log_sigma
    terms = 1.0 + two_ls - T.square(g.mu) - T.exp(two_ls)
    per_sample = T.sum_(terms, axis=(-2, -1)) * (-0.5 / n)
    return T.mean(per_sample)


def decode_adjacency(ls):
    """A' = ReLU(Z Z^T), symmetrized so the result is bitwise symmetric."""
    z = ls.z
    prod = T.matmul(z, T.swapaxes(z, -1, -2))
    # BLAS gives no bitwise guarantee that (ZZ^T)_ij == (ZZ^T)_ji
    return T.relu(0.5 * (prod + T.swapaxes(prod, -1, -2)))


def adaptive_gamma(a_raw):
    n = a_raw.shape[-1]
    if a_raw.shape[-2] != n:
        raise T.ShapeError(f"adjacency must be square, got {a_raw.shape}")
    trace = T.sum_(T.diagonal(a_raw), axis=-1)
    return T.sqrt(1.0 + n / (trace + EPS))


def dl_loss(a_raw, gamma):
    """Diagonal log penalty; gamma acts as a fixed weight here."""
    n = a_raw.shape[-1]
    diag = T.clamp(T.diagonal(a_raw), 0.0, 1.0)
    logs = T.sum_(T.log(diag + EPS), axis=-1)
    weight = -gamma.detach().data / (n * n)
    return T.mean(logs * weight)


def enhance_and_normalize(a_raw, gamma):
    """D^-1/2 (A' + gamma diag(A') + I) D^-1/2 with D the row sums of the bracket."""
    n = a_raw.shape[-1]
    g = T.reshape(gamma, gamma.shape + (1, 1))
    enhanced = a_raw + g * T.diag_embed(T.diagonal(a_raw)) + T.eye(n, dtype=a_raw.dtype)
    return symmetric_normalize(enhanced)


def symmetric_normalize(m):
    """m_ij / sqrt(d_i d_j) with d the row sums of m.

    Dividing by sqrt(d_i * d_j) rather than scaling by d_i^-1/2 twice keeps the
    result exactly symmetric and bounded by 1 for an isolated node.
    """
    n = m.shape[-1]
    deg = T.sum_(m, axis=-1)
    outer = T.reshape(deg, deg.shape + (1,)) * T.reshape(deg, deg.shape[:-1] + (1, n))
    return m / T.sqrt(outer)


def residual_prediction(ls, gamma):
    return T.reshape(gamma, gamma.shape + (1, 1)) * ls.z_hat


def scg_forward(x, scg, training, rng=None, noise=None):
    x_nodes = pool_to_nodes(x, scg.node_h, scg.node_w)
    gauss = encode(x_nodes, scg.mu_conv, scg.log_sigma_conv, scg.node_h, scg.node_w)
    latent = reparameterize(gauss, training, rng=rng, noise=noise)
    kl = kl_loss(gauss)
    a_raw = decode_adjacency(latent)
    gamma = adaptive_gamma(a_raw)
    dl = dl_loss(a_raw, gamma)
    a_norm = enhance_and_normalize(a_raw, gamma)
    y_hat = residual_prediction(latent, gamma)
    graph = GraphState(a_raw, a_norm, x_nodes, gamma)
    return SCGOutput(graph, y_hat, kl, dl, gauss, latent)
