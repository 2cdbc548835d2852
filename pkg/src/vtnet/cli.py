"""Command-line surface: model summaries, cost reports, gradient checks,
toy training, and attention-map export.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .accounting import count_flops, count_params, reduction_report
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GRADCHECK_TOLERANCE, gradcheck_suite
from .models import (ModelSpec, build_vt_resnet, load_config_file,
                     spec_from_config, toy_spec)
from .pgm import ImageFormatError
from .tensor import NumericsError
from .train import train_toy
from .visualize import visualize_attention

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_from_config_arg(path):
    spec = spec_from_config(load_config_file(path))
    return build_vt_resnet(spec)


def _cmd_summary(args):
    model = _build_from_config_arg(args.config)
    report = count_params(model)
    print(f"{model.family} ({model.variant}), input {model.input_hw}x{model.input_hw}")
    print(report.to_text())
    return EXIT_OK


def _cmd_flops(args):
    model = _build_from_config_arg(args.config)
    report = count_flops(model, args.input)
    if args.json:
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        print(report.to_text())
    return EXIT_OK


def _cmd_reduction(args):
    vt = build_vt_resnet(ModelSpec(family=args.family, variant="vt"))
    base = build_vt_resnet(ModelSpec(family=args.family, variant="baseline"))
    report = reduction_report(vt, base, args.input)
    if args.json:
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    else:
        print(report.to_text())
    return EXIT_OK


def _cmd_gradcheck(args):
    results = gradcheck_suite(seed=args.seed, eps=args.eps)
    failed = False
    for name, err in results:
        ok = err <= GRADCHECK_TOLERANCE
        failed = failed or not ok
        print(f"{name:<24} max rel err {err:.3e}  {'ok' if ok else 'FAIL'}")
    if failed:
        print(f"gradient check exceeded {GRADCHECK_TOLERANCE:g}")
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_train_toy(args):
    result = train_toy(toy_spec(), steps=args.steps, lr=args.lr, batch=args.batch,
                       seed=args.seed, log_every=args.log_every)
    print(f"steps {result.steps_run}  initial loss {result.initial_loss:.4f}  "
          f"smoothed final loss {result.final_smoothed_loss:.4f}  "
          f"train accuracy {result.accuracy:.3f}")
    if args.out:
        size = save_checkpoint(result.model, args.out)
        print(f"wrote {args.out} ({size} bytes)")
    return EXIT_OK


def _cmd_tokenize(args):
    model = load_checkpoint(args.ckpt)
    log = print if args.verbose else None
    written = visualize_attention(model, args.image, args.out_dir,
                                  colormap=args.colormap, log=log)
    print(f"wrote {len(written)} attention maps to {args.out_dir}")
    return EXIT_OK


def _make_parser():
    parser = _Parser(prog="vt", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summary", help="layer/parameter summary of a model config")
    p.add_argument("--config", required=True, help="model config JSON file")
    p.set_defaults(func=_cmd_summary)

    p = sub.add_parser("flops", help="FLOP/parameter report at a resolution")
    p.add_argument("--config", required=True)
    p.add_argument("--input", type=int, default=224, help="input resolution in pixels")
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    p.set_defaults(func=_cmd_flops)

    p = sub.add_parser("reduction", help="baseline/token-stage cost ratios")
    p.add_argument("--family", required=True, choices=["r18", "r34", "r50", "r101"])
    p.add_argument("--input", type=int, default=224)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_reduction)

    p = sub.add_parser("gradcheck", help="finite-difference check of every block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("train-toy", help="train the reduced model on synthetic shapes")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="", help="checkpoint path to write")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("tokenize", help="export attention maps for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True, help="binary PGM/PPM input image")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--colormap", action="store_true",
                   help="write blue-to-red PPM instead of grayscale PGM")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_tokenize)
    return parser


def main(argv=None):
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError, ImageFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
