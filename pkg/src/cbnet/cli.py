"""``cbnet`` command line.

Exit status: 0 success, 1 usage error, 2 data/format/config error,
3 numerical check failure.
"""
import argparse
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from .errors import CBNetError, ConfigError, FormatError
from .imageio import read_pgm, read_scene_image, to_uint8, write_pnm
from .model import ModelConfig, build_network, param_count, shape_trace
from .synth import SceneSpec, make_dataset, read_manifest

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("cbnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _require_file(path, what):
    if not os.path.isfile(path):
        raise ConfigError(f"{what} {path!r} does not exist")
    return path


def _stem(path):
    name = os.path.splitext(os.path.basename(path))[0]
    return name[:-len("_image")] if name.endswith("_image") else name


def labels_path(label_dir, image_path):
    return os.path.join(label_dir, f"{_stem(image_path)}_labels.pgm")


def _model_config(args):
    return ModelConfig(arch=args.model, base_width=args.width, seed=args.seed)


def _add_model_flags(p, default_width=None):
    p.add_argument("--model", choices=("cbnet", "unet"), default="cbnet")
    p.add_argument("--width", type=int, default=default_width, help="base channel width (default 32 CB-Net, 64 U-Net)")


# ---------------------------------------------------------------- subcommands

def cmd_synth(args):
    kw = {f.name: getattr(args, f.name) for f in fields(SceneSpec) if getattr(args, f.name) is not None}
    spec = SceneSpec(**kw).validate()
    rows = make_dataset(spec, args.n, args.out)
    print(f"wrote {len(rows)} scenes and manifest.csv to {args.out}")
    return EXIT_OK


def cmd_labelgen(args):
    from .labelgen import generate_labels
    rows = read_manifest(_require_file(args.manifest, "manifest"))
    out = args.out or os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(out, exist_ok=True)
    for row in rows:
        annotation = read_pgm(row["annotation"]) > 0
        labels, art = generate_labels(annotation, args.r_erode, args.r_dilate)
        write_pnm(labels_path(out, row["image"]), labels)
        if args.debug:
            stem = _stem(row["image"])
            for name, mask in (("eroded", art.eroded), ("dilated", art.dilated), ("axis", art.axis)):
                write_pnm(os.path.join(out, f"{stem}_{name}.pgm"), mask.astype(np.uint8) * 255)
    print(f"wrote labels for {len(rows)} scenes to {out}")
    return EXIT_OK


def _training_items(manifest, label_dir, with_gt=False):
    rows = read_manifest(_require_file(manifest, "manifest"))
    label_dir = label_dir or os.path.dirname(os.path.abspath(manifest))
    items = []
    for row in rows:
        image = read_scene_image(row["image"])
        labels = read_pgm(_require_file(labels_path(label_dir, row["image"]), "label map"))
        if labels.shape != image.shape[1:]:
            raise FormatError(f"label map for {row['image']} has extent {labels.shape}, image {image.shape[1:]}", 0)
        if with_gt:
            items.append((image, labels, read_pgm(row["gt"]) > 0))
        else:
            items.append((image, labels))
    return items


def _train_config(args):
    from .train import TrainConfig, load_config
    overrides = {"epochs": args.epochs, "seed": args.seed_train, "lr_schedule": args.lr_schedule,
                 "checkpoint_every": args.checkpoint_every}
    if args.config:
        return load_config(_require_file(args.config, "config file"), overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args):
    from .train import train
    config = _train_config(args)
    items = _training_items(args.manifest, args.labels)
    net = build_network(_model_config(args))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "train_config.txt"), "w") as fh:
        fh.write(config.to_text())
    result = train(items, net, config, out_dir=args.out)
    last = result.rows[-1]
    print(f"trained {config.epochs} epochs; final loss {last[1]:.6f}; "
          f"{len(result.checkpoints)} checkpoint(s) in {args.out}")
    return EXIT_OK


def cmd_predict(args):
    from .inference import predict_probability
    from .morphology import connected_components
    from .evaluate import postprocess
    from .weights import load_weights
    net = load_weights(_require_file(args.weights, "weight file"), _model_config(args))
    images = [_require_file(p, "image") for p in args.images]
    os.makedirs(args.out, exist_ok=True)
    for path in images:
        image = read_scene_image(path)
        prob = predict_probability(net, image, args.tile)
        mask = postprocess(prob, threshold=args.threshold)
        inst = connected_components(mask)
        if inst.count > 255:
            raise FormatError(f"{inst.count} instances do not fit an 8-bit label image", 0)
        stem = _stem(path)
        write_pnm(os.path.join(args.out, f"{stem}_prob.pgm"), to_uint8(prob))
        write_pnm(os.path.join(args.out, f"{stem}_mask.pgm"), mask.astype(np.uint8) * 255)
        write_pnm(os.path.join(args.out, f"{stem}_instances.pgm"), inst.labels.astype(np.uint8))
        print(f"{stem}: {inst.count} cells")
    return EXIT_OK


def cmd_evaluate(args):
    from .evaluate import (MatchRules, format_report, match_instances, pixel_metrics, report_row, write_overlay,
                           write_report_csv)
    from .morphology import InstanceLabeling, connected_components
    rows = read_manifest(_require_file(args.manifest, "manifest"))
    rules = MatchRules(cover=args.cover, too_small=args.too_small, too_large=args.too_large)
    out_rows, tp, fp, fn, ious, accs = [], 0, 0, 0, [], []
    for row in rows:
        stem = _stem(row["image"])
        pred_mask = read_pgm(_require_file(os.path.join(args.pred, f"{stem}_mask.pgm"), "prediction")) > 0
        gt_labels = read_pgm(row["gt"]).astype(np.int64)
        gt = InstanceLabeling(gt_labels, int(gt_labels.max()))
        pred = connected_components(pred_mask)
        report = match_instances(pred, gt, rules)
        iou, acc = pixel_metrics(pred_mask, gt_labels > 0)
        out_rows.append(report_row(stem, report, iou, acc))
        print(format_report(stem, report, iou, acc))
        tp, fp, fn = tp + report.tp, fp + report.fp, fn + report.fn
        ious.append(iou)
        accs.append(acc)
        if args.overlay:
            os.makedirs(args.overlay, exist_ok=True)
            write_overlay(os.path.join(args.overlay, f"{stem}_overlay.ppm"), read_scene_image(row["image"]),
                          pred, gt, report)
    from .evaluate import MatchReport
    total = MatchReport(tp, fp, fn)
    out_rows.append(report_row("total", total, float(np.mean(ious)), float(np.mean(accs))))
    print(f"total: TP={tp} FP={fp} FN={fn} precision={total.precision:.4f} recall={total.recall:.4f} "
          f"F1={total.f1:.4f} mean IoU={np.mean(ious):.4f}")
    if args.csv:
        write_report_csv(args.csv, out_rows)
    return EXIT_OK


def cmd_loo(args):
    from .train import format_curves, leave_one_out
    config = _train_config(args)
    items = _training_items(args.manifest, args.labels, with_gt=True)
    curves = leave_one_out(items, config, _model_config(args), tile=args.tile)
    table = format_curves(curves)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import format_results, run_suite
    results = run_suite(range(args.seeds), network=not args.layers_only, width=args.width)
    print(format_results(results))
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_shapes(args):
    config = ModelConfig(arch=args.model, base_width=args.width)
    print(shape_trace(config, args.size).table())
    return EXIT_OK


def cmd_params(args):
    cb = param_count(build_network(ModelConfig(arch="cbnet", base_width=args.width)))
    un = param_count(build_network(ModelConfig(arch="unet", base_width=args.unet_width)))
    print(f"cbnet (width {args.width}): {cb}")
    print(f"unet (width {args.unet_width}): {un}")
    print(f"ratio: {cb / un:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _train_flags(p):
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", help="directory with *_labels.pgm (default: manifest directory)")
    p.add_argument("--config", help="key = value training config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr-schedule", dest="lr_schedule", help="e.g. '1:1e-3, 101:1e-4'")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--seed", dest="seed_train", type=int, help="training seed (overrides the config file)")
    p.add_argument("--init-seed", dest="seed", type=int, default=0, help="weight initialisation seed")
    _add_model_flags(p, default_width=None)


def build_parser():
    parser = _Parser(prog="cbnet", description="Cell segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=5)
    for f in fields(SceneSpec):
        kind = float if f.type in (float, "float") else int
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("labelgen", help="derive 3-class labels from annotations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--r-erode", type=int, default=1)
    p.add_argument("--r-dilate", type=int, default=4)
    p.add_argument("--debug", action="store_true", help="also write eroded/dilated/axis masks")
    p.set_defaults(func=cmd_labelgen)

    p = sub.add_parser("train", help="train a network")
    _train_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment images with trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tile", type=int, default=444)
    p.add_argument("--threshold", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0, help=argparse.SUPPRESS)
    _add_model_flags(p)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred", required=True, help="directory with *_mask.pgm")
    p.add_argument("--csv")
    p.add_argument("--overlay", help="directory for colour-coded overlays")
    p.add_argument("--cover", type=float, default=0.5)
    p.add_argument("--too-small", type=float, default=0.5)
    p.add_argument("--too-large", type=float, default=2.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("loo", help="leave-one-out validation curves")
    _train_flags(p)
    p.add_argument("--out", help="CSV table path")
    p.add_argument("--tile", type=int, default=444)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--layers-only", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("shapes", help="print the shape trace for an input size")
    p.add_argument("--size", type=int, required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("params", help="parameter counts of both networks")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--unet-width", type=int, default=64)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (CBNetError, OSError, ValueError) as exc:
        print(f"cbnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
