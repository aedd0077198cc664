"""Command-line entry points.

Subcommands: train, synth-data, sample, eval, metric, sweep, serve. The sweep
command is a metric-only study that uses an exposure-curve stand-in enhancer,
so it needs no checkpoint.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data, metrics
from .errors import CleError
from .imaging import load_image, save_image
from .trainer import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train


def _load_mask(path) -> np.ndarray:
    from PIL import Image as PILImage
    with PILImage.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def cmd_train(args) -> int:
    with open(args.config) as f:
        raw = json.load(f)
    data_dir = raw.pop("data", None)
    out_path = raw.pop("output", "model.ckpt")
    synth_count = raw.pop("synth_count", 0)
    synth_seed = raw.pop("synth_seed", 0)
    from .losses import LossWeights
    if "loss_weights" in raw:
        raw["loss_weights"] = LossWeights(**raw["loss_weights"])
    if "channel_multipliers" in raw:
        raw["channel_multipliers"] = tuple(raw["channel_multipliers"])
    config = TrainConfig(**raw)

    if data_dir:
        scan = data.scan_paired_dataset(data_dir)
        pairs = [data.load_pair(e) for e in scan.pairs]
        if scan.excluded:
            print(f"excluded unmatched files: {', '.join(scan.excluded)}",
                  file=sys.stderr)
    elif synth_count:
        pairs = [data.synth_pair(synth_seed + i) for i in range(synth_count)]
    else:
        print("config must set either 'data' or 'synth_count'", file=sys.stderr)
        return 2

    def progress(step, total, scalars):
        if step == 1 or step % 50 == 0 or step == total:
            print(f"step {step}/{total} total {scalars['total']:.4f} "
                  f"simple {scalars['simple']:.4f} "
                  f"brightness {scalars['brightness']:.4f}")

    model = train(config, pairs, progress=progress)
    save_checkpoint(model, out_path)
    print(f"saved checkpoint to {out_path}")
    return 0


def cmd_synth_data(args) -> int:
    scan = data.make_synth_dataset(args.out, args.count, args.seed)
    print(f"wrote {len(scan.pairs)} pairs under {args.out}")
    return 0


def cmd_sample(args) -> int:
    model = load_checkpoint(args.ckpt)
    x = load_image(args.input)
    mask = _load_mask(args.mask) if args.mask else None
    out, _ = model.enhance(x, args.lam, mask=mask, s=args.guidance,
                           steps=args.steps, seed=args.seed)
    save_image(out, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    scan = data.scan_paired_dataset(args.dataset)
    report = evaluate(model, scan.pairs, steps=args.steps, guidance=args.guidance,
                      seed=args.seed)
    report.to_csv(args.report)
    agg = report.aggregate
    print(f"evaluated {len(report.rows)} pairs: "
          f"psnr {agg['psnr']:.2f} ssim {agg['ssim']:.4f} "
          f"perceptual {agg['perceptual']:.4f} li_lpips {agg['li_lpips']:.4f}")
    print(f"wrote {args.report}")
    return 0


def cmd_metric(args) -> int:
    a = load_image(args.a)
    b = load_image(args.b)
    fns = {
        "psnr": metrics.psnr,
        "ssim": metrics.ssim_metric,
        "perceptual": metrics.perceptual_distance,
        "li-lpips": metrics.li_lpips,
    }
    value = fns[args.kind](a, b)
    print(f"{args.kind} {value:.6f}")
    return 0


def cmd_sweep(args) -> int:
    input_img = load_image(args.input)
    ref = load_image(args.ref)
    lambdas = [float(v) for v in args.lambdas.split(",")]
    report = metrics.brightness_sweep(ref, input_img, lambdas,
                                     metrics.gamma_enhancer)
    report.to_json(args.report)
    for name in ("psnr", "ssim", "perceptual", "li_lpips"):
        print(f"{name}: shape {report.shapes[name]} range {report.ranges[name]:.4f}")
    print(f"wrote {args.report}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app({"default": args.ckpt}, workers=args.workers,
                     ui_dir=args.ui or None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cle",
        description="Brightness-controllable low-light enhancement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("synth-data", help="write a synthetic paired dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("sample", help="enhance one image with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="score a checkpoint on a paired dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--guidance", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("metric", help="compute one metric between two images")
    p.add_argument("--kind", required=True,
                   choices=["psnr", "ssim", "perceptual", "li-lpips"])
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(fn=cmd_metric)

    p = sub.add_parser("sweep", help="brightness sweep with a gamma stand-in enhancer")
    p.add_argument("--input", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--lambdas", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("serve", help="run the HTTP enhancement service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--ui", default=None, help="directory of static UI assets")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CleError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
