"""Command line interface: ``multiflow {synth,train,eval,metrics,mask-prep}``.

Exit codes: 0 success, 1 usage or configuration problem, 2 data or file
format problem, 3 numeric failure during training or scoring.
"""

import argparse
import json
import logging
import os
import sys

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import csv_auroc, emit_maps, evaluate, read_scores_csv, report_json, write_scores_csv
from .exceptions import ConfigurationError, DataError, NumericError, UsageError
from .manifest import DatasetManifest
from .morphology import DILATION_SIZE, mask_postprocess
from .synth import SynthConfig, generate_synthetic
from .tensorfile import read_tensor, write_tensor
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

logger = logging.getLogger("multiflow")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; 2 is reserved for data errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _require(parser, *paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            parser.error(f"no such file or directory: {p}")


def _cmd_synth(args):
    _require(args.cmd_parser, args.config)
    cfg = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    train_m, test_m = generate_synthetic(cfg, args.out_dir)
    print(f"wrote {len(train_m.instances)} training and {len(test_m.instances)} test "
          f"instances to {args.out_dir}")


def _cmd_train(args):
    _require(args.cmd_parser, args.manifest, args.config)
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.epochs is not None:
        cfg.epochs = args.epochs
        cfg.__post_init__()
    manifest = DatasetManifest.load(args.manifest)

    def progress(epoch, loss):
        if not args.quiet:
            print(f"epoch {epoch + 1}/{cfg.epochs}  loss {loss:.4f}", file=sys.stderr)

    ckpt = train(manifest, cfg, progress)
    save_checkpoint(args.out, ckpt)
    final = ckpt.loss_history[-1] if ckpt.loss_history else float("nan")
    print(f"saved {args.out} (final loss {final:.4f})")


def _cmd_eval(args):
    _require(args.cmd_parser, args.checkpoint, args.manifest)
    ckpt = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(args.manifest)
    result = evaluate(ckpt, manifest, include_logdet=not args.no_logdet, sigma=args.sigma,
                      fpr_limit=args.fpr_limit, keep_maps=args.emit_maps is not None,
                      top_view=args.top_view, neighbor_view=args.neighbor_view)
    if args.report:
        result.write_report(args.report)
    else:
        sys.stdout.write(report_json(result.report))
    if args.scores:
        write_scores_csv(args.scores, result.records)
    if args.emit_maps is not None:
        paths = emit_maps(result, args.emit_maps)
        logger.info("wrote %d map images to %s", len(paths), args.emit_maps)


def _cmd_metrics(args):
    _require(args.cmd_parser, args.scores)
    print(csv_auroc(read_scores_csv(args.scores), args.level))


def _cmd_mask_prep(args):
    _require(args.cmd_parser, *args.masks)
    os.makedirs(args.out, exist_ok=True)
    for path in args.masks:
        mask = read_tensor(path)
        if mask.ndim != 2:
            raise DataError(f"{path}: expected a 2-D mask, got shape {mask.shape}")
        out = os.path.join(args.out, os.path.basename(path))
        write_tensor(out, mask_postprocess(mask > 0, args.size))
        print(out)


def build_parser():
    parser = _Parser(prog="multiflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate a synthetic multi-view dataset")
    p.add_argument("out_dir", help="output directory (train.json, test.json, data/)")
    p.add_argument("--config", help="SynthConfig JSON file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(cmd_parser=p, func=_cmd_synth)

    p = sub.add_parser("train", help="fit a flow on a training manifest")
    p.add_argument("manifest", help="training manifest JSON (normal instances only)")
    p.add_argument("--config", help="TrainConfig JSON file (defaults if omitted)")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--epochs", type=int, help="override the config epoch count")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress")
    p.set_defaults(cmd_parser=p, func=_cmd_train)

    p = sub.add_parser("eval", help="score a test manifest and report metrics")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("--report", help="write the metrics JSON here instead of stdout")
    p.add_argument("--scores", help="write per-view scores as CSV")
    p.add_argument("--emit-maps", metavar="DIR", help="write per-view PGM anomaly maps")
    p.add_argument("--no-logdet", action="store_true",
                   help="score with 0.5*|z|^2 only, without the log-determinant")
    p.add_argument("--sigma", type=float, default=4.0,
                   help="Gaussian smoothing of upsampled maps (0 disables)")
    p.add_argument("--fpr-limit", type=float, default=0.3, help="AUPRO integration limit")
    p.add_argument("--top-view", dest="top_view", action=argparse.BooleanOptionalAction,
                   default=None, help="require the checkpoint's top-view flag to match")
    p.add_argument("--neighbor-view", dest="neighbor_view",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="require the checkpoint's neighbor-view flag to match")
    p.set_defaults(cmd_parser=p, func=_cmd_eval)

    p = sub.add_parser("metrics", help="AUROC of an exported score CSV")
    p.add_argument("scores", help="CSV with columns instance_id,view,score,label")
    p.add_argument("--level", choices=("image", "sample"), default="image")
    p.set_defaults(cmd_parser=p, func=_cmd_metrics)

    p = sub.add_parser("mask-prep", help="fill holes and dilate raw foreground masks")
    p.add_argument("masks", nargs="+", help="2-D mask tensor files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=DILATION_SIZE, help="dilation window size")
    p.set_defaults(cmd_parser=p, func=_cmd_mask_prep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SystemExit as exc:  # usage error raised by a subcommand
        return exc.code
    except (ConfigurationError, UsageError) as exc:
        print(f"multiflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"multiflow: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"multiflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
