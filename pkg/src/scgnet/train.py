"""Training loop, corpus evaluation and CSV logs."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_io
from .config import RunConfig, dump_config, parse_config
from .data import scene_batch
from .model import MetricsReport, SCGNet, compute_losses, evaluate
from .optim import make_optimizer

log = logging.getLogger(__name__)

LOSS_HEADER = "step,dice,kl,dl,total"


@dataclass
class TrainResult:
    model: SCGNet
    optimizer: object
    config: RunConfig
    epoch: int
    step: int
    losses: list = field(default_factory=list)   # dicts: step, dice, kl, dl, total
    metrics: list = field(default_factory=list)  # (epoch, split, MetricsReport)

    def checkpoint(self):
        return ckpt_io.capture(dump_config(self.config), self.model, self.optimizer, self.epoch, self.step)

    def loss_csv(self):
        rows = [LOSS_HEADER]
        rows += [f"{r['step']},{r['dice']!r},{r['kl']!r},{r['dl']!r},{r['total']!r}" for r in self.losses]
        return "\n".join(rows) + "\n"

    def metrics_csv(self):
        c = self.config.model.n_classes
        rows = ["epoch,split,oa,mf1," + ",".join(f"f1_{k}" for k in range(c))]
        for epoch, split, rep in self.metrics:
            rows.append(f"{epoch},{split},{rep.oa:.6f},{rep.mf1:.6f}," + ",".join(f"{v:.6f}" for v in rep.f1))
        return "\n".join(rows) + "\n"

    def epoch_means(self):
        """Mean total loss per epoch, in epoch order."""
        per = self.config.train.num_scenes // self.config.train.batch_size + bool(self.config.train.num_scenes % self.config.train.batch_size)
        totals = np.array([r["total"] for r in self.losses])
        return [float(totals[i:i + per].mean()) for i in range(0, len(totals), per)]


def build(cfg: RunConfig, resume=None):
    """Model and optimizer for ``cfg``, optionally restored from a checkpoint."""
    model = SCGNet(cfg.model)
    opt = make_optimizer(cfg.train.optimizer, model.named_parameters(), cfg.train.lr, cfg.train.momentum)
    epoch = step = 0
    if resume is not None:
        ck = ckpt_io.load(resume) if isinstance(resume, (str, os.PathLike)) else resume
        ckpt_io.restore(ck, model, opt)
        epoch, step = ck.meta("epoch"), ck.meta("step")
    return model, opt, epoch, step


def model_from_checkpoint(path):
    ck = ckpt_io.load(path)
    cfg = parse_config(ck.config_text).validate()
    model = SCGNet(cfg.model)
    ckpt_io.restore(ck, model)
    model.eval()
    return model, cfg, ck


def evaluate_corpus(model, spec, indices, batch_size=16):
    model.eval()
    report = None
    for start in range(0, len(indices), batch_size):
        imgs, masks = scene_batch(spec, indices[start:start + batch_size], dtype=model.config.dtype)
        rep = evaluate(model(imgs, training=False).logits, masks)
        report = rep if report is None else report.merge(rep)
    return report


def train(cfg: RunConfig, epochs=None, resume=None, out_dir=None, on_step=None) -> TrainResult:
    """Train for ``epochs`` more epochs (default: up to ``cfg.train.epochs``)."""
    tc = cfg.train
    model, opt, epoch0, step = build(cfg, resume)
    target = tc.epochs if epochs is None else epoch0 + epochs
    images, masks = scene_batch(cfg.scene, range(tc.num_scenes), dtype=cfg.model.dtype)
    result = TrainResult(model, opt, cfg, epoch0, step)
    for epoch in range(epoch0, target):
        model.train()
        order = np.random.default_rng([tc.seed, 1, epoch]).permutation(tc.num_scenes)
        for k, start in enumerate(range(0, tc.num_scenes, tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            noise_rng = np.random.default_rng([tc.seed, 2, epoch, k])
            opt.zero_grad()
            out = model(images[idx], training=True, rng=noise_rng)
            bundle = compute_losses(out, masks[idx], use_kl=tc.use_kl, use_dl=tc.use_dl)
            bundle.total.backward()
            opt.step()
            step += 1
            row = {"step": step, **bundle.values()}
            result.losses.append(row)
            if on_step:
                on_step(epoch, row)
        result.epoch, result.step = epoch + 1, step
        last = epoch + 1 == target
        if (tc.eval_every and (epoch + 1) % tc.eval_every == 0) or last:
            tr = evaluate_corpus(model, cfg.scene, np.arange(tc.num_scenes))
            ev = evaluate_corpus(model, cfg.scene, np.arange(tc.eval_offset, tc.eval_offset + tc.eval_scenes))
            result.metrics += [(epoch + 1, "train", tr), (epoch + 1, "eval", ev)]
            log.info("epoch %d train mF1 %.4f eval OA %.4f", epoch + 1, tr.mf1, ev.oa)
        if out_dir is not None:
            write_outputs(result, out_dir)
    return result


def write_outputs(result: TrainResult, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    ckpt_io.save(os.path.join(out_dir, os.path.basename(result.config.train.checkpoint)), result.checkpoint())
    with open(os.path.join(out_dir, "losses.csv"), "w") as fh:
        fh.write(result.loss_csv())
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write(result.metrics_csv())


def mean_clamped_diagonal(model, spec, indices):
    """Mean over scenes of sum_i clamp(A'_ii, 0, 1) / n in eval mode."""
    imgs, _ = scene_batch(spec, indices, dtype=model.config.dtype)
    out = model(imgs, training=False)
    diag = np.clip(np.diagonal(out.scg.graph.a_raw.data, axis1=-2, axis2=-1), 0, 1)
    return float(diag.mean())


def last_report(result: TrainResult, split) -> MetricsReport:
    return [rep for _, s, rep in result.metrics if s == split][-1]
