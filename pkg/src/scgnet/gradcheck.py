"""Central finite-difference checks for every differentiable operation.

Each registered scope builds a random 64-bit instance, computes the tape
gradient of a scalar and compares it with central differences. The error
metric is max |analytic - numeric| / max(1, |analytic|, |numeric|) taken
elementwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nn, scg
from . import tensor as T
from .gcn import GCNLayer, gcn_layer, gcn_stack, normalize_adjacency
from .model import ModelConfig, SCGNet, compute_losses, dice_loss, total_loss
from .tensor import Tensor

ELEMENTARY_TOL = 1e-6
COMPOSITE_TOL = 1e-5
MODEL_TOL = 1e-3
STEP = 1e-5
# instances whose relu/clamp inputs come closer than this to a kink are redrawn
KINK_MARGIN = 1e-3
MAX_DRAWS = 500


@dataclass
class CheckResult:
    scope: str
    errors: dict  # parameter group -> max relative error
    tolerance: float
    seconds: float

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self):
        return self.max_error < self.tolerance


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def numeric_grad(fn, arr, step=STEP):
    """Central differences of scalar ``fn()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn().data)
        flat[i] = orig - step
        lo = float(fn().data)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * step)
    return g


def check_fn(fn, leaves, step=STEP):
    """Compare tape and numeric gradients of ``fn()`` for each named leaf tensor."""
    for leaf in leaves.values():
        leaf.grad = None
    fn().backward()
    errors = {}
    for name, leaf in leaves.items():
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        errors[name] = relative_error(analytic, numeric_grad(fn, leaf.data, step))
    return errors


def _leaf(rng, shape, lo=-2.0, hi=2.0, avoid=None, margin=1e-2):
    data = rng.uniform(lo, hi, size=shape)
    if avoid is not None:
        # keep samples away from kinks so central differences stay valid
        for k in np.atleast_1d(avoid):
            close = np.abs(data - k) < margin
            data[close] = k + np.sign(data[close] - k + 1e-12) * margin * 2
    return Tensor(data.astype(np.float64), requires_grad=True)


def _project(out, rng):
    """Reduce a tensor output to a scalar through fixed random weights."""
    w = rng.uniform(-1, 1, size=out.shape)
    return T.sum_(out * w)


# -- scope builders: rng -> (fn, leaves) --------------------------------------------

def _unary(op, lo=-2.0, hi=2.0, avoid=None):
    def build(rng):
        x = _leaf(rng, (3, 4), lo, hi, avoid)
        w = rng.uniform(-1, 1, size=(3, 4))
        return (lambda: T.sum_(op(x) * w)), {"x": x}
    return build


def _binary(op, b_lo=-2.0, b_hi=2.0):
    def build(rng):
        a = _leaf(rng, (3, 4))
        b = _leaf(rng, (1, 4), b_lo, b_hi)  # broadcast along the leading axis
        w = rng.uniform(-1, 1, size=(3, 4))
        return (lambda: T.sum_(op(a, b) * w)), {"a": a, "b": b}
    return build


def _matmul(rng):
    a, b = _leaf(rng, (4, 3)), _leaf(rng, (3, 5))
    return (lambda: _project(T.matmul(a, b), np.random.default_rng(1))), {"a": a, "b": b}


def _reduce(op):
    def build(rng):
        x = _leaf(rng, (2, 3, 4))
        w = rng.uniform(-1, 1, size=(2, 4))
        return (lambda: T.sum_(op(x, axis=1) * w)), {"x": x}
    return build


def _shape(op):
    def build(rng):
        x = _leaf(rng, (2, 3, 3))
        return (lambda: _project(op(x), np.random.default_rng(2))), {"x": x}
    return build


def _concat(rng):
    a, b = _leaf(rng, (2, 3)), _leaf(rng, (2, 2))
    return (lambda: _project(T.concat([a, b], axis=1), np.random.default_rng(3))), {"a": a, "b": b}


def _where(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    mask = rng.uniform(size=(3, 4)) > 0.5
    return (lambda: _project(T.where(mask, a, b), np.random.default_rng(4))), {"a": a, "b": b}


def _softmax(rng):
    x = _leaf(rng, (3, 5))
    return (lambda: _project(T.softmax(x, axis=-1), np.random.default_rng(5))), {"x": x}


def _conv2d(rng):
    x = _leaf(rng, (1, 2, 5, 5))
    w = _leaf(rng, (3, 2, 3, 3))
    b = _leaf(rng, (3,))
    proj = np.random.default_rng(6)
    fixed = proj.uniform(-1, 1, size=(1, 3, 3, 3))
    return (lambda: T.sum_(nn.conv2d(x, w, b, stride=2, padding=1) * fixed)), {"x": x, "weight": w, "bias": b}


def _pool(rng):
    x = _leaf(rng, (1, 2, 5, 7))
    fixed = rng.uniform(-1, 1, size=(1, 2, 2, 3))
    return (lambda: T.sum_(nn.adaptive_avg_pool(x, 2, 3) * fixed)), {"x": x}


def _upsample(rng):
    x = _leaf(rng, (1, 2, 3, 2))
    fixed = rng.uniform(-1, 1, size=(1, 2, 7, 5))
    return (lambda: T.sum_(nn.bilinear_upsample(x, 7, 5) * fixed)), {"x": x}


def _batchnorm(rng):
    bn = nn.BatchNorm(3, dtype=np.float64)
    bn.scale = _leaf(rng, (3,), 0.5, 2.0)
    bn.shift = _leaf(rng, (3,))
    x = _leaf(rng, (4, 3, 2, 2))
    fixed = rng.uniform(-1, 1, size=x.shape)
    return (lambda: T.sum_(nn.batchnorm(x, bn) * fixed)), {"x": x, "scale": bn.scale, "shift": bn.shift}


def _gauss(rng, n=4, c=3):
    mu = _leaf(rng, (2, n, c))
    ls = _leaf(rng, (2, n, c), -1.0, 1.0)
    return scg.GaussianParams(mu, ls)


def _symmetric_adj(rng, n=4, b=2):
    z = rng.normal(size=(b, n, 3))
    a = np.maximum(z @ np.swapaxes(z, -1, -2), 0) + 0.05
    return Tensor(a, requires_grad=True)


def _scg_module(rng, d=4, c=3, node=2):
    s = scg.SCG(d, c, node, node, rng=rng, dtype=np.float64)
    # non-zero log-sigma weights so that branch is exercised
    s.log_sigma_conv.weight = _leaf(rng, s.log_sigma_conv.weight.shape, -0.3, 0.3)
    s.log_sigma_conv.bias = _leaf(rng, s.log_sigma_conv.bias.shape, -0.3, 0.3)
    return s


def _pool_to_nodes(rng):
    x = _leaf(rng, (2, 3, 6, 6))
    return (lambda: _project(scg.pool_to_nodes(x, 2, 3), np.random.default_rng(7))), {"x": x}


def _encode(rng):
    s = _scg_module(rng)
    x = _leaf(rng, (2, 4, 4))

    def fn():
        g = scg.encode(x, s.mu_conv, s.log_sigma_conv, 2, 2)
        return scg.kl_loss(g)
    return fn, {"x": x, **dict(s.named_parameters())}


def _reparameterize(rng):
    g = _gauss(rng)
    noise = rng.standard_normal(g.mu.shape)
    proj = np.random.default_rng(8)
    w1, w2 = proj.uniform(-1, 1, size=g.mu.shape), proj.uniform(-1, 1, size=g.mu.shape)

    def fn():
        ls = scg.reparameterize(g, True, noise=noise)
        return T.sum_(ls.z * w1) + T.sum_(ls.z_hat * w2)
    return fn, {"mu": g.mu, "log_sigma": g.log_sigma}


def _kl(rng):
    g = _gauss(rng)
    return (lambda: scg.kl_loss(g)), {"mu": g.mu, "log_sigma": g.log_sigma}


def _decode(rng):
    z = _leaf(rng, (2, 4, 3))
    return (lambda: _project(scg.decode_adjacency(scg.LatentState(z, z, None)), np.random.default_rng(9))), {"z": z}


def _gamma(rng):
    a = _symmetric_adj(rng)
    return (lambda: T.sum_(scg.adaptive_gamma(a))), {"a_raw": a}


def _dl(rng):
    a = _symmetric_adj(rng)
    idx = np.arange(a.shape[-1])
    # diagonal entries straddling the clamp boundary but away from it
    a.data[:, idx, idx] = rng.choice([0.3, 0.6, 0.8, 1.5], size=(a.shape[0], a.shape[-1]))
    # gamma is a constant weight inside this loss, so it is not a checked leaf
    gamma = Tensor(rng.uniform(1.2, 3.0, size=(a.shape[0],)))
    return (lambda: scg.dl_loss(a, gamma)), {"a_raw": a}


def _enhance(rng):
    a = _symmetric_adj(rng)
    gamma = Tensor(rng.uniform(1.2, 3.0, size=(a.shape[0],)), requires_grad=True)
    return (lambda: _project(scg.enhance_and_normalize(a, gamma), np.random.default_rng(10))), {"a_raw": a, "gamma": gamma}


def _residual(rng):
    # gamma computed from A' so the gradient flows through the adaptive factor too
    a = _symmetric_adj(rng)
    zh = _leaf(rng, (2, 4, 3))

    def fn():
        gamma = scg.adaptive_gamma(a)
        return _project(scg.residual_prediction(scg.LatentState(zh, zh, None), gamma), np.random.default_rng(11))
    return fn, {"a_raw": a, "z_hat": zh}


# dl_loss treats gamma as a constant weight, so its tape gradient is the
# derivative with gamma pinned; the numeric side pins gamma at the base point too.
def _scg_forward(rng):
    s = _scg_module(rng, d=4, c=3, node=2)
    x = _leaf(rng, (1, 4, 6, 6))
    noise = rng.standard_normal((1, 4, 3))
    proj = np.random.default_rng(12)
    wa, wy = proj.uniform(-1, 1, size=(1, 4, 4)), proj.uniform(-1, 1, size=(1, 4, 3))

    gamma0 = scg.scg_forward(x, s, True, noise=noise).graph.gamma.detach()

    def fn():
        out = scg.scg_forward(x, s, True, noise=noise)
        dl = scg.dl_loss(out.graph.a_raw, gamma0)
        return out.kl + dl + T.sum_(out.graph.a_norm * wa) + T.sum_(out.y_hat * wy)
    return fn, {"x": x, **dict(s.named_parameters())}


def _normalize(rng):
    a = _symmetric_adj(rng)
    return (lambda: _project(normalize_adjacency(a), np.random.default_rng(13))), {"a": a}


def _gcn_layer(rng):
    layer = GCNLayer(5, 3, use_relu=True, use_batchnorm=True, rng=rng, dtype=np.float64)
    a = _leaf(rng, (2, 4, 4), 0.0, 1.0)
    x = _leaf(rng, (2, 4, 5))
    return (lambda: _project(gcn_layer(a, x, layer), np.random.default_rng(14))), {"a_hat": a, "x": x, **dict(layer.named_parameters())}


def _gcn_stack(rng):
    layers = [
        GCNLayer(5, 4, use_relu=True, use_batchnorm=True, rng=rng, dtype=np.float64),
        GCNLayer(4, 3, rng=rng, dtype=np.float64),
    ]
    a = _leaf(rng, (2, 4, 4), 0.0, 1.0)
    x = _leaf(rng, (2, 4, 5))
    params = {f"layer{i}.{k}": v for i, l in enumerate(layers) for k, v in l.named_parameters()}
    return (lambda: _project(gcn_stack(a, x, layers), np.random.default_rng(15))), {"a_hat": a, "x": x, **params}


def _backbone(rng):
    cfg = micro_config(int(rng.integers(1 << 30)))
    model = SCGNet(cfg)
    x = _leaf(rng, (2, 3, 16, 16), 0.0, 1.0)
    fixed = rng.uniform(-1, 1, size=(2, cfg.feature_channels, 2, 2))
    return (lambda: T.sum_(model.backbone(x) * fixed)), dict(model.backbone.named_parameters())


def _dice(rng):
    logits = _leaf(rng, (2, 3, 4, 4))
    labels = rng.integers(0, 3, size=(2, 4, 4))
    return (lambda: dice_loss(logits, labels)), {"logits": logits}


def _total(rng):
    d, k, l = (_leaf(rng, ()) for _ in range(3))
    return (lambda: total_loss(d, k, l).total), {"dice": d, "kl": k, "dl": l}


def micro_config(seed=0):
    return ModelConfig(in_channels=3, widths=(4, 6, 8), node_h=2, node_w=2, n_classes=3,
                       gcn_hidden=4, image_size=16, seed=seed, dtype="float64")


def _model(rng):
    cfg = micro_config(int(rng.integers(1 << 30)))
    model = SCGNet(cfg).train()
    # give the log-sigma branch non-zero weights so its gradient is non-trivial
    model.scg.log_sigma_conv.weight.data[:] = rng.uniform(-0.05, 0.05, size=model.scg.log_sigma_conv.weight.shape)
    img = rng.uniform(0, 1, size=(2, 3, 16, 16))
    labels = rng.integers(0, cfg.n_classes, size=(2, 16, 16))
    noise = rng.standard_normal((2, cfg.n_nodes, cfg.n_classes))

    gamma0 = model(img, training=True, noise=noise).scg.graph.gamma.detach()

    def fn():
        out = model(img, training=True, noise=noise)
        return compute_losses(out, labels).total - out.scg.dl + scg.dl_loss(out.scg.graph.a_raw, gamma0)
    return fn, dict(model.named_parameters())


@dataclass
class Scope:
    build: object
    tolerance: float
    trials: int | None = None  # overrides the requested trial count (expensive scopes)


SCOPES = {
    "add": Scope(_binary(T.add), ELEMENTARY_TOL),
    "sub": Scope(_binary(T.sub), ELEMENTARY_TOL),
    "mul": Scope(_binary(T.mul), ELEMENTARY_TOL),
    "div": Scope(_binary(T.div, 0.5, 2.0), ELEMENTARY_TOL),
    "neg": Scope(_unary(T.neg), ELEMENTARY_TOL),
    "exp": Scope(_unary(T.exp), ELEMENTARY_TOL),
    "log": Scope(_unary(T.log, 0.2, 2.0), ELEMENTARY_TOL),
    "relu": Scope(_unary(T.relu, avoid=0.0), ELEMENTARY_TOL),
    "square": Scope(_unary(T.square), ELEMENTARY_TOL),
    "sqrt": Scope(_unary(T.sqrt, 0.2, 2.0), ELEMENTARY_TOL),
    "clamp": Scope(_unary(lambda x: T.clamp(x, -1.0, 1.0), avoid=(-1.0, 1.0)), ELEMENTARY_TOL),
    "softmax": Scope(_softmax, ELEMENTARY_TOL),
    "sum": Scope(_reduce(T.sum_), ELEMENTARY_TOL),
    "mean": Scope(_reduce(T.mean), ELEMENTARY_TOL),
    "matmul": Scope(_matmul, ELEMENTARY_TOL),
    "reshape": Scope(_shape(lambda x: T.reshape(x, (3, 6))), ELEMENTARY_TOL),
    "transpose": Scope(_shape(lambda x: T.transpose(x, (2, 0, 1))), ELEMENTARY_TOL),
    "diagonal": Scope(_shape(T.diagonal), ELEMENTARY_TOL),
    "diag_embed": Scope(_shape(T.diag_embed), ELEMENTARY_TOL),
    "concat": Scope(_concat, ELEMENTARY_TOL),
    "where": Scope(_where, ELEMENTARY_TOL),
    "conv2d": Scope(_conv2d, ELEMENTARY_TOL),
    "adaptive_avg_pool": Scope(_pool, ELEMENTARY_TOL),
    "bilinear_upsample": Scope(_upsample, ELEMENTARY_TOL),
    "batchnorm": Scope(_batchnorm, COMPOSITE_TOL),
    "pool_to_nodes": Scope(_pool_to_nodes, COMPOSITE_TOL),
    "encode": Scope(_encode, COMPOSITE_TOL),
    "reparameterize": Scope(_reparameterize, COMPOSITE_TOL),
    "kl_loss": Scope(_kl, ELEMENTARY_TOL),
    "decode_adjacency": Scope(_decode, COMPOSITE_TOL),
    "adaptive_gamma": Scope(_gamma, COMPOSITE_TOL),
    "dl_loss": Scope(_dl, COMPOSITE_TOL),
    "enhance_and_normalize": Scope(_enhance, COMPOSITE_TOL),
    "residual_prediction": Scope(_residual, COMPOSITE_TOL),
    "scg_forward": Scope(_scg_forward, COMPOSITE_TOL),
    "normalize_adjacency": Scope(_normalize, COMPOSITE_TOL),
    "gcn_layer": Scope(_gcn_layer, COMPOSITE_TOL),
    "gcn_stack": Scope(_gcn_stack, COMPOSITE_TOL),
    "backbone": Scope(_backbone, COMPOSITE_TOL, trials=1),
    "dice_loss": Scope(_dice, COMPOSITE_TOL),
    "total_loss": Scope(_total, ELEMENTARY_TOL),
    "model": Scope(_model, MODEL_TOL, trials=1),
}


class UnknownScopeError(KeyError):
    pass


def grad_check(scope, trials=2, tolerance=None, seed=0):
    if scope not in SCOPES:
        raise UnknownScopeError(f"unknown grad-check scope {scope!r}; known: {', '.join(SCOPES)}")
    entry = SCOPES[scope]
    tol = entry.tolerance if tolerance is None else tolerance
    errors = {}
    start = time.perf_counter()
    prev = T.DEFAULT_DTYPE
    T.set_default_dtype(np.float64)
    try:
        for trial in range(entry.trials or trials):
            fn, leaves = _draw(entry.build, [seed, trial, sum(map(ord, scope))])
            for name, err in check_fn(fn, leaves).items():
                errors[name] = max(errors.get(name, 0.0), err)
    finally:
        T.set_default_dtype(prev)
    return CheckResult(scope, errors, tol, time.perf_counter() - start)


def _draw(build, key):
    """Build an instance whose kinks are all at least KINK_MARGIN away."""
    rng = np.random.default_rng(key)
    for _ in range(MAX_DRAWS):
        fn, leaves = build(rng)
        with T.watch_kinks() as w:
            fn()
        if w.margin >= KINK_MARGIN:
            return fn, leaves
    raise RuntimeError(f"no kink-free instance after {MAX_DRAWS} draws")


def run_all(scopes=None, trials=2, tolerance=None, seed=0):
    return [grad_check(s, trials, tolerance, seed) for s in (scopes or SCOPES)]


def format_report(results):
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        worst = max(r.errors, key=r.errors.get) if r.errors else "-"
        lines.append(f"{status} {r.scope:<22} max_rel_err={r.max_error:.3e} tol={r.tolerance:.0e} worst={worst} ({r.seconds:.2f}s)")
    return "\n".join(lines)


__all__ = ["SCOPES", "grad_check", "run_all", "format_report", "relative_error", "numeric_grad", "check_fn",
           "micro_config"]
