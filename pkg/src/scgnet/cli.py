"""Command line entry point: ``scgnet train|eval|grad-check|export-graph``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import gradcheck, plotting, tsr
from .config import ConfigError, load_config
from .data import SceneSpec, generate_scene, scene_batch
from .model import predict
from .train import evaluate_corpus, model_from_checkpoint, train, write_outputs

log = logging.getLogger("scgnet")


def write_pgm(path, labels, maxval):
    labels = np.asarray(labels)
    if maxval < 1 or maxval > 255:
        raise ValueError(f"PGM maxval must be in [1, 255], got {maxval}")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(labels.astype(np.uint8).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, w, h, maxval, body = _split_header(buf, 4)
    if magic != b"P5":
        raise ValueError("not a binary PGM")
    return np.frombuffer(body, dtype=np.uint8).reshape(int(h), int(w)), int(maxval)


def write_ppm(path, image):
    """``image`` is (h, w, 3) floats in [0, 1]."""
    img = np.clip(np.round(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _split_header(buf, fields):
    parts, pos = [], 0
    while len(parts) < fields:
        while buf[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        parts.append(buf[pos:end])
        pos = end
    return (*parts, buf[pos + 1:])


def parse_scenes(arg, cfg):
    """``--scenes`` value: ``key=value`` pairs separated by commas.

    Keys: offset, count, seed, noise, min_shapes, max_shapes. Defaults come
    from the checkpoint's config (held-out offset and eval count).
    """
    spec = SceneSpec(**{k: getattr(cfg.scene, k) for k in ("image_size", "n_classes", "min_shapes", "max_shapes", "noise", "seed")})
    offset, count = cfg.train.eval_offset, cfg.train.eval_scenes
    for item in filter(None, (arg or "").split(",")):
        key, _, value = (s.strip() for s in item.partition("="))
        if key == "offset":
            offset = int(value)
        elif key == "count":
            count = int(value)
        elif key in ("seed", "min_shapes", "max_shapes"):
            setattr(spec, key, int(value))
        elif key == "noise":
            spec.noise = float(value)
        else:
            raise ConfigError(f"unknown scenes key {key!r}")
    spec.validate()
    return spec, np.arange(offset, offset + count)


def cmd_train(args):
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs

    def progress(epoch, row):
        if row["step"] % 50 == 0:
            log.info("epoch %d step %d total %.4f (dice %.4f kl %.4f dl %.4f)", epoch + 1, row["step"], row["total"], row["dice"], row["kl"], row["dl"])

    result = train(cfg, resume=args.resume, out_dir=args.out, on_step=progress)
    write_outputs(result, args.out)
    if result.losses:
        plotting.plot_losses(result.losses, os.path.join(args.out, "losses.png"))
    if result.metrics:
        plotting.plot_metrics(result.metrics, os.path.join(args.out, "metrics.png"))
        epoch, _, final = [m for m in result.metrics if m[1] == "train"][-1]
        with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
            fh.write(f"epoch={epoch}\n" + final.to_text())
        print(final.to_text(), end="")
    return 0


def cmd_eval(args):
    model, cfg, _ = model_from_checkpoint(args.ckpt)
    spec, indices = parse_scenes(args.scenes, cfg)
    report = evaluate_corpus(model, spec, indices)
    print(report.to_text(), end="")
    out = args.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write(report.to_csv())
    c = cfg.model.n_classes
    shown = indices[: args.save_limit]
    imgs, masks = scene_batch(spec, shown, dtype=cfg.model.dtype)
    preds = predict(model(imgs, training=False).logits)
    for idx, pred in zip(shown, preds):
        image, _ = generate_scene(spec, int(idx))
        write_ppm(os.path.join(out, f"scene_{idx}.ppm"), image)
        write_pgm(os.path.join(out, f"scene_{idx}_pred.pgm"), pred, c - 1)
    plotting.plot_predictions(imgs, masks, preds, os.path.join(out, "predictions.png"), c)
    plotting.plot_confusion(report.confusion, os.path.join(out, "confusion.png"))
    return 0


def cmd_grad_check(args):
    scopes = [args.scope] if args.scope else None
    if args.scope and args.scope not in gradcheck.SCOPES:
        print(f"unknown scope {args.scope!r}; known: {', '.join(gradcheck.SCOPES)}", file=sys.stderr)
        return 2
    results = gradcheck.run_all(scopes, trials=args.trials, tolerance=args.tol)
    print(gradcheck.format_report(results))
    failed = [r.scope for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} scopes passed")
    return 1 if failed else 0


def graph_summary(a_raw, gamma):
    n = a_raw.shape[-1]
    density = float((a_raw > 1e-6).mean())
    return f"n={n}\ngamma={float(gamma):.9g}\nedge_density={density:.6f}\n"


def cmd_export_graph(args):
    model, cfg, _ = model_from_checkpoint(args.ckpt)
    imgs, _ = scene_batch(cfg.scene, [args.scene], dtype=cfg.model.dtype)
    g = model(imgs, training=False).scg.graph
    a_raw, a_norm = g.a_raw.data[0], g.a_norm.data[0]
    os.makedirs(args.out, exist_ok=True)
    tsr.save(os.path.join(args.out, "a_raw.tsr"), a_raw)
    tsr.save(os.path.join(args.out, "a_norm.tsr"), a_norm)
    summary = graph_summary(a_raw, g.gamma.data[0])
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        fh.write(summary)
    plotting.plot_adjacency(a_raw, a_norm, os.path.join(args.out, "adjacency.png"), (cfg.model.node_h, cfg.model.node_w))
    print(summary, end="")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="scgnet", description="Self-constructing graph network on synthetic scenes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--epochs", type=int, help="override the configured epoch count")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on synthetic scenes")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--scenes", default="", help="comma-separated key=value: offset, count, seed, noise, min_shapes, max_shapes")
    e.add_argument("--out", default="eval_out")
    e.add_argument("--save-limit", type=int, default=8, help="number of scenes written as PPM/PGM")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("grad-check", help="finite-difference gradient verification")
    g.add_argument("--scope", help="operation name, or 'model'; default: all")
    g.add_argument("--tol", type=float, help="override the per-scope tolerance")
    g.add_argument("--trials", type=int, default=2)
    g.set_defaults(func=cmd_grad_check)

    x = sub.add_parser("export-graph", help="dump the learned adjacency for one scene")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--scene", type=int, required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_graph)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
