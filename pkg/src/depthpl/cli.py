"""Command-line surface.

Subcommands: gen-data, train-stage1, train-completion, gen-pseudo,
train-stage2, eval, export-cloud, gradcheck. Global flags: --config PATH,
--seed N, --out DIR, and repeatable --set key=value overrides.

Exit codes: 0 success, 1 usage error, 2 data/format error. All artifacts
land under --out, one subdirectory per stage, each with a JSON run manifest.
"""

import argparse
import os
import sys

import numpy as np

from .config import ConfigError, load_config
from .formats import FormatError, read_pfm, read_pgm_mask, write_ply
from .geometry import DepthMap, PixelMask, project_2d_to_3d, uniform_subsample
from . import pipeline


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(prog="depthpl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p):
        p.add_argument("--config", help="run configuration file (key = value lines)")
        p.add_argument("--seed", type=int, help="root seed override")
        p.add_argument("--out", required=True, help="workspace directory for all artifacts")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override (repeatable)")
        return p

    common(sub.add_parser("gen-data", help="render the procedural dataset"))
    common(sub.add_parser("train-stage1", help="train the preliminary depth model"))
    common(sub.add_parser("train-completion", help="pretrain the completion model"))
    common(sub.add_parser("gen-pseudo", help="generate pseudo-labels offline"))
    common(sub.add_parser("train-stage2", help="self-train on pseudo-labels"))
    p_eval = common(sub.add_parser("eval", help="evaluate a checkpoint on the eval split"))
    p_eval.add_argument("--checkpoint", help="checkpoint path (default: stage2 then stage1)")
    p_eval.add_argument("--cap", type=float, help="depth cap in meters (default: eval_cap)")
    p_exp = common(sub.add_parser("export-cloud", help="project a depth map to a PLY cloud"))
    p_exp.add_argument("--depth", required=True, help="input PFM depth map")
    p_exp.add_argument("--mask", help="optional PGM mask (default: all pixels)")
    p_exp.add_argument("--ratio", type=float, default=1.0, help="subsample ratio (0, 1]")
    common(sub.add_parser("gradcheck", help="run the finite-difference gradient battery"))
    return parser


def _progress(msg):
    print(msg, file=sys.stderr)


def _cmd_export_cloud(cfg, args):
    depth = read_pfm(args.depth)
    cam = cfg.camera()
    if depth.shape != (cam.height, cam.width):
        raise FormatError(f"{args.depth}: depth is {depth.shape[1]}x{depth.shape[0]}, "
                          f"config camera expects {cam.width}x{cam.height}")
    mask = read_pgm_mask(args.mask) if args.mask else PixelMask.full(*depth.shape)
    positive = PixelMask((depth > 0) & (mask.bits > 0))
    cloud = project_2d_to_3d(DepthMap(depth), positive, cam)
    if args.ratio < 1.0:
        cloud = uniform_subsample(cloud, args.ratio, cfg.seed)
    out_dir = pipeline.ws_path(args.out, "export")
    os.makedirs(out_dir, exist_ok=True)
    out_path = pipeline.ws_path(out_dir, "cloud.ply")
    write_ply(out_path, cloud)
    print(f"wrote {len(cloud)} points to {out_path}")


def _cmd_gradcheck(cfg, args):
    from . import losses as L
    from . import tensor as T
    from .geometry import ssim as ssim_map, warp_horizontal

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    checks = []
    gt = rng.uniform(1, 10, (4, 6))
    checks.append(("task_loss", T.check_gradients(
        lambda z: L.task_loss(z, gt), rng.uniform(1, 10, (4, 6)))))
    img = rng.random((3, 4, 6))
    checks.append(("smoothness_loss", T.check_gradients(
        lambda z: L.smoothness_loss(z, img), rng.uniform(1, 10, (4, 6)))))
    ref_cloud = rng.random((6, 3)) * 2
    checks.append(("chamfer_distance", T.check_gradients(
        lambda z: L.chamfer_distance(z, ref_cloud), rng.random((5, 3)))))
    ref_img = rng.random((1, 4, 6))
    checks.append(("ssim", T.check_gradients(
        lambda z: T.mean(ssim_map(z, ref_img)), rng.random((1, 4, 6)))))
    wimg = rng.random((1, 4, 8))
    checks.append(("warp_horizontal", T.check_gradients(
        lambda z: T.mean(warp_horizontal(wimg, z)), rng.uniform(0.2, 0.7, (4, 8)))))
    failed = [name for name, rep in checks if not rep.ok]
    for name, rep in checks:
        status = "ok" if rep.ok else "FAIL"
        print(f"{name}: max rel err {rep.max_rel_err:.3e} [{status}]")
    if failed:
        raise FormatError(f"gradient checks failed: {', '.join(failed)}")


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1

    try:
        cfg = load_config(args.config, overrides=args.set, seed=args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "gen-data":
            records = pipeline.run_gen_data(cfg, args.out, progress=_progress)
            print(f"wrote {len(records)} samples under {pipeline.ws_path(args.out, 'data')}")
        elif args.command == "train-stage1":
            pipeline.run_train_stage1(cfg, args.out, progress=_progress)
            print(f"stage-1 checkpoint at {pipeline.ws_path(args.out, 'stage1', 'checkpoint.bin')}")
        elif args.command == "train-completion":
            pipeline.run_train_completion(cfg, args.out, progress=_progress)
            print(f"completion checkpoint at "
                  f"{pipeline.ws_path(args.out, 'completion', 'checkpoint.bin')}")
        elif args.command == "gen-pseudo":
            labels = pipeline.run_gen_pseudo(cfg, args.out, progress=_progress)
            print(f"wrote {len(labels)} label sets under {pipeline.ws_path(args.out, 'labels')}")
        elif args.command == "train-stage2":
            pipeline.run_train_stage2(cfg, args.out, progress=_progress)
            print(f"stage-2 checkpoint at {pipeline.ws_path(args.out, 'stage2', 'checkpoint.bin')}")
        elif args.command == "eval":
            report = pipeline.run_eval(cfg, args.out, checkpoint=args.checkpoint, cap=args.cap)
            sys.stdout.write(report.to_csv())
        elif args.command == "export-cloud":
            _cmd_export_cloud(cfg, args)
        elif args.command == "gradcheck":
            _cmd_gradcheck(cfg, args)
    except (FormatError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
