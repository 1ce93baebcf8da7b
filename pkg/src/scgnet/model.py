"""SCG-Net: CNN backbone -> SCG -> two-layer GCN -> fused node logits -> pixels."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .gcn import GCNLayer, gcn_stack
from .nn import BatchNorm, Conv2d, Module, bilinear_upsample
from .scg import SCG, SCGOutput
from .tensor import Tensor


class NonFiniteLossError(FloatingPointError):
    def __init__(self, component, value):
        super().__init__(f"non-finite {component} loss: {value}")
        self.component = component


@dataclass
class ModelConfig:
    in_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64)
    node_h: int = 8
    node_w: int = 8
    n_classes: int = 4
    gcn_hidden: int | None = None  # defaults to widths[-1] // 2
    gcn_layers: int = 2
    image_size: int = 64
    seed: int = 42
    use_gcn: bool = True
    use_residual: bool = True
    dtype: str = "float32"

    @property
    def stride(self):
        return 2 ** len(self.widths)

    @property
    def n_nodes(self):
        return self.node_h * self.node_w

    @property
    def feature_channels(self):
        return self.widths[-1]

    def gcn_widths(self):
        d = self.feature_channels
        hidden = self.gcn_hidden or max(d // 2, 1)
        if self.gcn_layers == 0:
            return [d]
        return [d] + [hidden] * (self.gcn_layers - 1) + [self.n_classes]

    def validate(self):
        if self.image_size % self.stride:
            raise ValueError(f"image_size {self.image_size} not divisible by backbone stride {self.stride}")
        fmap = self.image_size // self.stride
        if self.node_h > fmap or self.node_w > fmap:
            raise ValueError(f"node grid {self.node_h}x{self.node_w} exceeds feature map {fmap}x{fmap}")
        if self.gcn_layers and self.n_classes < 1:
            raise ValueError("n_classes must be positive")


@dataclass
class ForwardResult:
    logits: Tensor       # (b, c, H, W)
    node_logits: Tensor  # (b, n, c)
    scg: SCGOutput
    gcn_out: Tensor | None


@dataclass
class LossBundle:
    dice: Tensor
    kl: Tensor
    dl: Tensor
    total: Tensor

    def values(self):
        return {k: float(getattr(self, k).data) for k in ("dice", "kl", "dl", "total")}


@dataclass
class MetricsReport:
    confusion: np.ndarray
    f1: np.ndarray = field(init=False)
    mf1: float = field(init=False)
    oa: float = field(init=False)

    def __post_init__(self):
        cm = self.confusion.astype(np.int64)
        tp = np.diag(cm).astype(np.float64)
        fp = cm.sum(axis=0) - tp
        fn = cm.sum(axis=1) - tp
        denom = 2 * tp + fp + fn
        self.f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
        self.mf1 = float(self.f1.mean())
        total = cm.sum()
        self.oa = float(np.trace(cm) / total) if total else 0.0

    def merge(self, other):
        return MetricsReport(self.confusion + other.confusion)

    def to_text(self):
        lines = [f"oa={self.oa:.6f}", f"mf1={self.mf1:.6f}"]
        lines += [f"f1_{k}={v:.6f}" for k, v in enumerate(self.f1)]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        rows = ["class,f1"] + [f"{k},{v:.6f}" for k, v in enumerate(self.f1)]
        rows += [f"oa,{self.oa:.6f}", f"mf1,{self.mf1:.6f}"]
        return "\n".join(rows) + "\n"


class Backbone(Module):
    """Three stride-2 stages of (conv3x3 -> BN -> ReLU) x 2."""

    def __init__(self, in_ch, widths, rng, dtype=None):
        self.stages = []
        for w in widths:
            self.stages.append(_Stage(in_ch, w, rng, dtype))
            in_ch = w

    def __call__(self, x):
        for stage in self.stages:
            x = stage(x)
        return x


class _Stage(Module):
    def __init__(self, in_ch, out_ch, rng, dtype):
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(out_ch, dtype=dtype)

    def __call__(self, x):
        x = T.relu(self.bn1(self.conv1(x)))
        return T.relu(self.bn2(self.conv2(x)))


def backbone_param_count(in_ch, widths):
    total = 0
    for w in widths:
        total += (in_ch * w * 9 + w) + 2 * w + (w * w * 9 + w) + 2 * w
        in_ch = w
    return total


class SCGNet(Module):
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        dtype = np.dtype(config.dtype).type
        rng = np.random.default_rng(config.seed)
        self.backbone = Backbone(config.in_channels, config.widths, rng, dtype)
        self.scg = SCG(config.feature_channels, config.n_classes, config.node_h, config.node_w, rng=rng, dtype=dtype)
        widths = config.gcn_widths()
        self.gcn = [
            GCNLayer(a, b, use_relu=(i == 0 and len(widths) > 2), use_batchnorm=(i == 0 and len(widths) > 2), rng=rng, dtype=dtype)
            for i, (a, b) in enumerate(zip(widths, widths[1:]))
        ]

    def __call__(self, img, training=None, rng=None, noise=None):
        return model_forward(self, img, training=training, rng=rng, noise=noise)


def model_forward(model, img, training=None, rng=None, noise=None):
    cfg = model.config
    training = model.training if training is None else training
    img = T.as_tensor(img)
    if img.dtype != np.dtype(cfg.dtype):
        img = Tensor(img.data.astype(cfg.dtype))
    b, _, H, W = img.shape
    if H % cfg.stride or W % cfg.stride:
        raise T.ShapeError(f"input {H}x{W} not divisible by backbone stride {cfg.stride}")
    feats = model.backbone(img)
    out = model.scg(feats, training=training, rng=rng, noise=noise)
    node_logits = None
    gcn_out = None
    if cfg.use_gcn:
        gcn_out = gcn_stack(out.graph.a_norm, out.graph.node_features, model.gcn)
        node_logits = gcn_out
    if cfg.use_residual:
        node_logits = out.y_hat if node_logits is None else node_logits + out.y_hat
    if node_logits is None:
        node_logits = T.zeros(out.y_hat.shape, dtype=out.y_hat.dtype)
    c = node_logits.shape[-1]
    grid = T.reshape(T.transpose(node_logits, (0, 2, 1)), (b, c, cfg.node_h, cfg.node_w))
    logits = bilinear_upsample(grid, H, W)
    return ForwardResult(logits, node_logits, out, gcn_out)


def one_hot(labels, n_classes, dtype=np.float64):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    eye = np.eye(n_classes, dtype=dtype)
    return np.moveaxis(eye[labels], -1, 1)


def dice_loss(logits, labels, smooth=1.0):
    """1 - mean over classes of the soft dice coefficient of softmax(logits) vs one-hot labels."""
    logits = T.as_tensor(logits)
    c = logits.shape[1]
    y = one_hot(labels, c, logits.dtype)
    p = T.softmax(logits, axis=1)
    axes = (0,) + tuple(range(2, logits.ndim))
    inter = T.sum_(p * y, axis=axes)
    denom = T.sum_(p, axis=axes) + y.sum(axis=axes) + smooth
    dice = (2.0 * inter + smooth) / denom
    return 1.0 - T.mean(dice)


def total_loss(dice, kl, dl, use_kl=True, use_dl=True):
    """Unweighted sum of the three terms; a disabled term is still recorded."""
    for name, value in (("dice", dice), ("kl", kl), ("dl", dl)):
        v = float(value.data)
        if not math.isfinite(v):
            raise NonFiniteLossError(name, v)
    total = dice
    if use_kl:
        total = total + kl
    if use_dl:
        total = total + dl
    return LossBundle(dice, kl, dl, total)


def compute_losses(result: ForwardResult, labels, use_kl=True, use_dl=True):
    return total_loss(dice_loss(result.logits, labels), result.scg.kl, result.scg.dl, use_kl, use_dl)


def predict(logits):
    data = getattr(logits, "data", logits)
    return np.argmax(data, axis=1)  # ties resolve to the lowest class index


def confusion_matrix(pred, labels, n_classes):
    idx = np.asarray(labels, dtype=np.int64).ravel() * n_classes + np.asarray(pred, dtype=np.int64).ravel()
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def evaluate(logits, labels):
    """Confusion matrix (rows = truth, cols = prediction), per-class F1, mF1 and OA."""
    data = getattr(logits, "data", logits)
    c = data.shape[1]
    return MetricsReport(confusion_matrix(predict(data), labels, c))
