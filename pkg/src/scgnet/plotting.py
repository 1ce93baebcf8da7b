"""Report figures written next to the CSV/text outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CLASS_COLORS = ["#404040", "#e6401a", "#33cc4d", "#4059f2", "#f2c440", "#a040f2"]


def _label_cmap(n_classes):
    from matplotlib.colors import ListedColormap

    colors = [CLASS_COLORS[k % len(CLASS_COLORS)] for k in range(n_classes)]
    return ListedColormap(colors)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_losses(rows, path, smooth=25):
    """Per-step loss components with a running mean overlay."""
    steps = np.array([r["step"] for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.6))
    for key, color in (("total", "k"), ("dice", "C0")):
        vals = np.array([r[key] for r in rows])
        axes[0].plot(steps, vals, color=color, alpha=0.25, lw=0.6)
        if len(vals) >= smooth:
            run = np.convolve(vals, np.ones(smooth) / smooth, mode="valid")
            axes[0].plot(steps[smooth - 1:], run, color=color, lw=1.4, label=key)
        else:
            axes[0].plot(steps, vals, color=color, lw=1.4, label=key)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss")
    axes[0].legend(frameon=False)
    for key, color in (("kl", "C1"), ("dl", "C2")):
        axes[1].plot(steps, [r[key] for r in rows], color=color, lw=0.8, label=key)
    axes[1].set_xlabel("step")
    axes[1].set_yscale("symlog", linthresh=1e-4)
    axes[1].legend(frameon=False)
    return _save(fig, path)


def plot_metrics(metrics, path):
    """mF1 and OA per evaluated epoch, one line per split."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for split, style in (("train", "-"), ("eval", "--")):
        pts = [(e, rep) for e, s, rep in metrics if s == split]
        if not pts:
            continue
        epochs = [e for e, _ in pts]
        ax.plot(epochs, [rep.mf1 for _, rep in pts], "C0" + style, marker="o", ms=3, label=f"{split} mF1")
        ax.plot(epochs, [rep.oa for _, rep in pts], "C3" + style, marker="s", ms=3, label=f"{split} OA")
    ax.set_xlabel("epoch")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_confusion(confusion, path):
    cm = np.asarray(confusion, dtype=np.float64)
    rows = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(4, 3.6))
    im = ax.imshow(rows, cmap="Blues", vmin=0, vmax=1)
    for (i, j), v in np.ndenumerate(rows):
        ax.text(j, i, f"{v:.2f}", ha="center", va="center", fontsize=8, color="w" if v > 0.6 else "k")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def plot_predictions(images, masks, preds, path, n_classes, limit=6):
    """Rows of input / ground truth / prediction for the first few scenes."""
    k = min(limit, len(images))
    fig, axes = plt.subplots(k, 3, figsize=(6, 2 * k), squeeze=False)
    cmap = _label_cmap(n_classes)
    for i in range(k):
        axes[i, 0].imshow(np.clip(images[i].transpose(1, 2, 0), 0, 1))
        axes[i, 1].imshow(masks[i], cmap=cmap, vmin=0, vmax=n_classes - 1, interpolation="nearest")
        axes[i, 2].imshow(preds[i], cmap=cmap, vmin=0, vmax=n_classes - 1, interpolation="nearest")
        for ax in axes[i]:
            ax.set_xticks([])
            ax.set_yticks([])
    for ax, title in zip(axes[0], ("input", "truth", "prediction")):
        ax.set_title(title, fontsize=9)
    return _save(fig, path)


def plot_adjacency(a_raw, a_norm, path, node_shape=None):
    fig, axes = plt.subplots(1, 3 if node_shape else 2, figsize=(11 if node_shape else 7.5, 3.4))
    for ax, mat, title in zip(axes, (a_raw, a_norm), ("learned A'", "normalized A-hat")):
        im = ax.imshow(mat, cmap="viridis")
        ax.set_title(title, fontsize=9)
        fig.colorbar(im, ax=ax, fraction=0.046)
    if node_shape:
        # self-loop strength per node, laid out on the node grid
        im = axes[2].imshow(np.diag(a_raw).reshape(node_shape), cmap="magma")
        axes[2].set_title("diag(A') on node grid", fontsize=9)
        fig.colorbar(im, ax=axes[2], fraction=0.046)
    return _save(fig, path)
