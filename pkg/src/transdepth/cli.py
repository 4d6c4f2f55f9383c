"""Command-line entry point: ``transdepth <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from transdepth.errors import TransDepthError

log = logging.getLogger("transdepth")


def _cmd_train(args) -> int:
    from transdepth.config import load_config
    from transdepth.train import train

    result = train(load_config(args.config), args.out)
    print(f"initial_loss {result.initial_loss:.15g}")
    print(f"final_loss {result.final_loss:.15g}")
    print(f"checkpoint {Path(args.out) / 'model.tdck'}")
    return 0


def _cmd_eval(args) -> int:
    from transdepth.checkpoint import load_checkpoint
    from transdepth.data import ingest_directory
    from transdepth.metrics import report_to_json
    from transdepth.train import evaluate, load_dataset

    ckpt = load_checkpoint(args.ckpt)
    if args.data == "synth":
        data = load_dataset(ckpt.config, "eval")
    else:
        data = ingest_directory(args.data, args.convention)
    text = report_to_json(evaluate(ckpt, data))
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(text + "\n")
    print(text)
    return 0


def _cmd_gradcheck(args) -> int:
    from transdepth.gradcheck_suite import gradcheck_cmd

    report = gradcheck_cmd(args.scope)
    name, err = report.worst
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} scope={args.scope} max_rel_error={report.max_rel_error:.3e} tol={report.tol:.0e} "
          f"worst={name} ({err:.3e}) kink_skipped={report.skipped} "
          f"unresolved={report.unresolved} (max_abs {report.unresolved_max_abs:.1e})")
    return 0 if report.passed else 1


def _cmd_synth(args) -> int:
    from transdepth.data import save_scenes
    from transdepth.synth import synth_generate

    scenes = synth_generate(args.seed, args.n, args.height, args.width)
    save_scenes(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    from transdepth.ablate import run_ablation, write_csv
    from transdepth.config import load_config

    rows = run_ablation(load_config(args.config), args.axis)
    write_csv(rows, args.out)
    for row in rows:
        print(f"{row['variant']}: final_train_loss={row['final_train_loss']:.6g} data={row['data_hash']}")
    return 0


def _cmd_predict(args) -> int:
    from transdepth.checkpoint import load_checkpoint
    from transdepth.data import center_crop, read_rgb_png, write_depth_png, write_normal_png
    from transdepth.train import predict

    ckpt = load_checkpoint(args.ckpt)
    image = read_rgb_png(args.image)
    h, w = (image.shape[1] // 32) * 32, (image.shape[2] // 32) * 32
    if h == 0 or w == 0:
        raise TransDepthError(f"{args.image}: image smaller than 32x32")
    pred = predict(ckpt.build_model(), center_crop(image, h, w)[None])[0]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".png":
        if ckpt.config.model.task == "depth":
            write_depth_png(out, pred[0])
        else:
            write_normal_png(out, pred)
    else:
        out.write_bytes(np.ascontiguousarray(pred, dtype="<f4").tobytes())
    print(f"wrote {out} ({'x'.join(map(str, pred.shape))})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    from transdepth.ablate import AXES
    from transdepth.gradcheck_suite import SCOPES

    parser = argparse.ArgumentParser(prog="transdepth", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write a JSON metrics report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset directory, or 'synth' for the config's eval scenes")
    p.add_argument("--report", required=True)
    p.add_argument("--convention", choices=("kitti_png16", "npy_like_raw"), default="kitti_png16")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check; nonzero exit on failure")
    p.add_argument("--scope", required=True, choices=SCOPES)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synth", help="write synthetic scenes to a directory")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ablate", help="train and evaluate every variant along one axis")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("predict", help="predict one image; .png output is a 16-bit depth PNG, anything else raw f32")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)
    return parser


def _u64(value: int, flag: str, parser: argparse.ArgumentParser) -> None:
    if not 0 <= value < 2**64:
        parser.error(f"{flag} must be an unsigned 64-bit integer")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth":
        _u64(args.seed, "--seed", parser)
        if args.n < 1:
            parser.error("--n must be at least 1")
        if args.height % 32 or args.width % 32 or args.height < 32 or args.width < 32:
            parser.error("--height and --width must be positive multiples of 32")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TransDepthError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
