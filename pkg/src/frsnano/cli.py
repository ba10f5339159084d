"""``frsnano`` command-line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import data as D
from .ablation import VARIANTS, run_ablation
from .boxes import Detection
from .config import ConfigError, RunConfig
from .detector import CheckpointError, Dataset, FrsNano, evaluate_model, fit, load_model, save_model
from .metrics import evaluate
from .verify import run_selftest

logger = logging.getLogger("frsnano")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    """Bad input detected before any work starts."""


def _write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _prepare_out(args, cfg: RunConfig) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "config.txt"), cfg.to_text())
    return out


def _load_dataset(path: str, classes: int) -> Dataset:
    if not path:
        raise ValidationError("no manifest given")
    if not os.path.isfile(path):
        raise ValidationError(f"manifest not found: {path}")
    try:
        images, labels, ids = D.load_manifest_dataset(path, classes)
    except (D.LabelError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return Dataset(images, labels, ids)


def _check_images(ds: Dataset, size: int, path: str) -> None:
    if len(ds) and ds.images.shape[1:] != (3, size, size):
        raise ValidationError(f"{path}: images are {ds.images.shape[1:]}, model expects (3, {size}, {size})")


# -- commands ---------------------------------------------------------------


def cmd_selftest(args, cfg: RunConfig) -> int:
    reports = run_selftest(instances=args.instances, seed=cfg.seed)
    for r in reports:
        print(r.line())
    failed = [r for r in reports if not r.passed]
    if failed:
        print(f"selftest failed: first failing op {failed[0].op}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"selftest passed: {len(reports)} checks")
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    spec = cfg.synth()
    out = _prepare_out(args, cfg)
    img_dir, lab_dir = os.path.join(out, "images"), os.path.join(out, "labels")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lab_dir, exist_ok=True)
    pairs = []
    for i in range(cfg["data.count"]):
        item_spec = D.SynthSceneSpec(**{**spec.__dict__, "seed": cfg.seed * 1_000_003 + i})
        img, ann = D.synth_generate(item_spec, f"{cfg.seed}_{i:06d}")
        ip = os.path.join(img_dir, ann.image_id + ".npy")
        lp = os.path.join(lab_dir, ann.image_id + ".txt")
        np.save(ip, img)
        _write(lp, D.serialize_labels(ann.boxes))
        pairs.append((ip, lp))
    D.write_manifest(os.path.join(out, "manifest.txt"), pairs)
    print(f"wrote {len(pairs)} images to {out}")
    return EXIT_OK


def cmd_split(args, cfg: RunConfig) -> int:
    pairs = _read_manifest(args.manifest)
    if not pairs:
        raise ValidationError(f"{args.manifest}: empty manifest")
    out = _prepare_out(args, cfg)
    parts = D.split_dataset(list(range(len(pairs))), cfg.seed)
    for name, idx in zip(("train", "val", "test"), parts):
        D.write_manifest(os.path.join(out, f"{name}.txt"), [pairs[i] for i in idx])
        print(f"{name} {len(idx)}")
    return EXIT_OK


def _read_manifest(path: str):
    if not os.path.isfile(path):
        raise ValidationError(f"manifest not found: {path}")
    try:
        return D.read_manifest(path)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmd_stats(args, cfg: RunConfig) -> int:
    items = []
    for img, lab in _read_manifest(args.manifest):
        with open(lab, encoding="utf-8") as fh:
            try:
                boxes = D.parse_labels(fh.read(), cfg["model.classes"])
            except D.LabelError as exc:
                raise ValidationError(f"{lab}: {exc}") from None
        items.append(D.AnnotatedImage(os.path.basename(img), 0, 0, boxes))
    text = D.stats_report(items, cfg["model.classes"]).to_text()
    sys.stdout.write(text)
    if args.out:
        out = _prepare_out(args, cfg)
        _write(os.path.join(out, "stats.txt"), text)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    model_cfg, train_cfg = cfg.model(), cfg.train()
    train = _load_dataset(cfg["data.train"], model_cfg.classes)
    if not len(train):
        raise ValidationError("training set is empty")
    _check_images(train, model_cfg.input_size, cfg["data.train"])
    val = _load_dataset(cfg["data.val"], model_cfg.classes) if cfg["data.val"] else None
    if val is not None:
        _check_images(val, model_cfg.input_size, cfg["data.val"])
    out = _prepare_out(args, cfg)
    model = FrsNano(model_cfg, cfg.seed)
    log_path = os.path.join(out, "loss_log.txt")
    best = {"score": None}
    with open(log_path, "w", encoding="utf-8") as log:

        def on_epoch(entry, m):
            log.write(entry.line() + "\n")
            log.flush()
            save_model(os.path.join(out, "last.ckpt"), m)
            score = entry.val_map50 if entry.val_map50 is not None else -entry.loss
            if best["score"] is None or score > best["score"]:
                best["score"] = score
                save_model(os.path.join(out, "best.ckpt"), m)
            print(entry.line(), flush=True)

        fit(model, train, train_cfg, val, on_epoch, cfg["train.max_steps"] or None)
    return EXIT_OK


def labels_as_predictions(ds: Dataset) -> List[List[Detection]]:
    return [[Detection(c, 1.0, (cx, cy, w, h)) for c, cx, cy, w, h in lab] for lab in ds.labels]


def cmd_eval(args, cfg: RunConfig) -> int:
    model_cfg = cfg.model()
    manifest = args.manifest or cfg["data.val"]
    ds = _load_dataset(manifest, model_cfg.classes)
    if not len(ds):
        raise ValidationError(f"{manifest}: empty evaluation set")
    if cfg["eval.preset"] == "labels":
        preds = dict(zip(ds.ids, labels_as_predictions(ds)))
        gts = {i: [(c, (cx, cy, w, h)) for c, cx, cy, w, h in lab] for i, lab in zip(ds.ids, ds.labels)}
        report = evaluate(preds, gts, model_cfg.classes)
    else:
        if not args.checkpoint:
            raise ValidationError("eval needs --checkpoint unless eval.preset = labels")
        _check_images(ds, model_cfg.input_size, manifest)
        model = FrsNano(model_cfg, cfg.seed)
        try:
            load_model(args.checkpoint, model)
        except (OSError, CheckpointError) as exc:
            raise ValidationError(f"{args.checkpoint}: {exc}") from None
        report = evaluate_model(model, ds, cfg["eval.conf_threshold"], cfg["eval.iou_threshold"])
    out = _prepare_out(args, cfg)
    _write(os.path.join(out, "report.txt"), report.to_kv())
    table = report.to_table(D.DEFAULT_CLASSES if model_cfg.classes == len(D.DEFAULT_CLASSES) else None)
    _write(os.path.join(out, "report_table.txt"), table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    seeds = list(args.seeds or cfg["train.seeds"] or [cfg.seed])
    if len(seeds) < 2:
        logger.warning("ablation with fewer than 2 seeds (%s); medians are single runs", seeds)
    variants = args.variants or list(VARIANTS)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ValidationError(f"unknown variants {bad}; choose from {list(VARIANTS)}")
    model_cfg, train_cfg = cfg.model(), cfg.train()
    train = _load_dataset(cfg["data.train"], model_cfg.classes)
    val = _load_dataset(cfg["data.val"], model_cfg.classes)
    if not len(train) or not len(val):
        raise ValidationError("ablation needs non-empty data.train and data.val")
    _check_images(train, model_cfg.input_size, cfg["data.train"])
    _check_images(val, model_cfg.input_size, cfg["data.val"])
    out = _prepare_out(args, cfg)

    def on_run(variant, seed, report):
        print(f"{variant} seed={seed} mAP50={report.map50!r} mAP50-95={report.map50_95!r}", flush=True)

    table = run_ablation(
        model_cfg, train_cfg, train, val, seeds, variants, on_run,
        cfg["eval.conf_threshold"], cfg["eval.iou_threshold"],
    )
    text = table.to_text()
    _write(os.path.join(out, "ablation.txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------


def _seed_list(s: str) -> List[int]:
    try:
        return [int(p) for p in s.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="section.key = value configuration file")
    common.add_argument("--seed", type=int, default=None, help="run seed (default 0)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    parser = argparse.ArgumentParser(prog="frsnano", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("selftest", parents=[common], help="gradient checks and oracle comparisons")
    p.add_argument("--instances", type=int, default=50)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="seeded 8:1:1 split of a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", parents=[common], help="class counts and size buckets")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", parents=[common], help="train the detector")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="paired multi-seed variant comparison")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds (default train.seeds or --seed)")
    p.add_argument("--variants", type=lambda s: [v for v in s.split(",") if v], help=f"subset of {list(VARIANTS)}")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        cfg = RunConfig.load(args.config, args.set, args.seed)
        return args.func(args, cfg)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
