"""Command-line surface: train | predict | eval | flops | route-stats.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every training flag mirrors a config key; flags override file values.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .tensor import Tensor, no_grad
from .net import SCHEDULES, predict_sequence
from .routing import RoutingMode, make_routing
from .metrics import evaluate_model
from .flops import model_ledger, usage_rate
from .data import load_dataset, load_sequence, save_frames
from .train import TrainConfig, train
from .checkpoint import model_from_checkpoint
from .errors import DataError, NumericError

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dmvfn", description="Dynamic multi-scale voxel flow video prediction")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True, help="JSON config file")
    p_train.add_argument("--resume", help="checkpoint to continue from")
    for flag, kind in [
        ("--seed", int), ("--steps", int), ("--batch", int), ("--patch", int),
        ("--lr-start", float), ("--lr-end", float), ("--weight-decay", float),
        ("--gamma", float), ("--levels", int), ("--beta", float),
        ("--tau-start", float), ("--tau-end", float), ("--random-p", float),
        ("--width-scale", float), ("--ckpt-every", int),
    ]:
        p_train.add_argument(flag, type=kind)
    p_train.add_argument("--manifest")
    p_train.add_argument("--ckpt", dest="ckpt_path")
    p_train.add_argument("--log", dest="log_path")
    p_train.add_argument("--supervision", choices=["full", "single"])
    p_train.add_argument("--routing-mode", choices=["always_on", "random", "gumbel", "stebs"])
    p_train.add_argument("--schedule", choices=sorted(SCHEDULES))
    p_train.add_argument("--no-spatial-path", action="store_true")

    p_pred = sub.add_parser("predict", help="predict future frames from a frame directory")
    p_pred.add_argument("--ckpt", required=True)
    p_pred.add_argument("--frames", required=True, help="directory of input PNG frames (last two are used)")
    p_pred.add_argument("--k", type=int, default=5)
    p_pred.add_argument("--beta", type=float, default=0.5)
    p_pred.add_argument("--out", required=True)
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--mode", choices=["always_on", "random", "gumbel", "stebs"], default="stebs")
    p_pred.add_argument("--deterministic-routing", action="store_true")

    p_eval = sub.add_parser("eval", help="metric report over a dataset, with copy-last baseline")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--horizons", default="1,3,5")
    p_eval.add_argument("--beta", type=float, default=0.5)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--mode", choices=["always_on", "random", "gumbel", "stebs"], default="stebs")
    p_eval.add_argument("--deterministic-routing", action="store_true")
    p_eval.add_argument("--out", help="write the CSV report here")

    p_flops = sub.add_parser("flops", help="static and dynamic cost ledger")
    p_flops.add_argument("--ckpt", required=True)
    p_flops.add_argument("--beta", type=float, default=0.5)
    p_flops.add_argument("--manifest", help="sample frames for dynamic/expected costs")
    p_flops.add_argument("--height", type=int, default=64)
    p_flops.add_argument("--width", type=int, default=64)
    p_flops.add_argument("--seed", type=int, default=0)
    p_flops.add_argument("--limit", type=int, default=0, help="cap the number of sampled clips")

    p_route = sub.add_parser("route-stats", help="per-block usage rates over a dataset")
    p_route.add_argument("--ckpt", required=True)
    p_route.add_argument("--manifest", required=True)
    p_route.add_argument("--by", choices=["motion", "interval"])
    p_route.add_argument("--beta", type=float, default=0.5)
    p_route.add_argument("--seed", type=int, default=0)
    p_route.add_argument("--mode", choices=["always_on", "random", "gumbel", "stebs"], default="stebs")
    return parser


def _mode_from_args(args) -> RoutingMode:
    return RoutingMode(kind=args.mode, beta=args.beta,
                       deterministic_infer=getattr(args, "deterministic_routing", False))


def _cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config)
    overrides = {
        "seed": args.seed, "steps": args.steps, "batch": args.batch, "patch": args.patch,
        "lr_start": args.lr_start, "lr_end": args.lr_end, "weight_decay": args.weight_decay,
        "gamma": args.gamma, "levels": args.levels, "beta": args.beta,
        "tau_start": args.tau_start, "tau_end": args.tau_end, "random_p": args.random_p,
        "width_scale": args.width_scale, "ckpt_every": args.ckpt_every,
        "manifest": args.manifest, "ckpt_path": args.ckpt_path, "log_path": args.log_path,
        "supervision": args.supervision, "routing_mode": args.routing_mode,
        "schedule": args.schedule,
    }
    d = cfg.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_spatial_path:
        d["spatial_path"] = False
    cfg = TrainConfig.from_dict(d)
    result = train(cfg, resume=args.resume)
    print(f"trained {cfg.steps} steps; checkpoint: {result.ckpt_path}; log: {result.log_path}")
    return 0


def _cmd_predict(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    clip = load_sequence(args.frames)
    if len(clip.frames) < 2:
        raise DataError(f"need at least two input frames in {args.frames}")
    prev, cur = clip.frames[-2], clip.frames[-1]
    mode = _mode_from_args(args)
    rng = np.random.default_rng(args.seed)
    frames = predict_sequence(model, prev, cur, args.k, mode=mode, rng=rng)
    if not all(np.isfinite(f).all() for f in frames):
        raise NumericError("prediction produced non-finite values")
    save_frames(frames, args.out)
    print(f"wrote {args.k} frames to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    clips = load_dataset(args.manifest)
    try:
        horizons = [int(x) for x in args.horizons.split(",") if x.strip()]
    except ValueError:
        raise DataError(f"bad horizons list: {args.horizons!r}")
    if not horizons or min(horizons) < 1:
        raise DataError(f"bad horizons list: {args.horizons!r}")
    mode = _mode_from_args(args)
    rng = np.random.default_rng(args.seed)
    try:
        report = evaluate_model(model, clips, horizons, mode=mode, rng=rng)
    except ValueError as e:
        raise DataError(str(e))
    print(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_csv())
        print(f"wrote {args.out}")
    return 0


def _cmd_flops(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    rng = np.random.default_rng(args.seed)
    mode = RoutingMode(kind="stebs", beta=args.beta)
    if args.manifest:
        clips = load_dataset(args.manifest)
        if args.limit:
            clips = clips[:args.limit]
        h, w = clips[0].frames[0].shape[1:]
        ledger = model_ledger(model, h, w)
        expected, sampled = [], []
        for clip in clips:
            pt, ct = Tensor(clip.frames[0][None]), Tensor(clip.frames[1][None])
            with no_grad():
                routing = make_routing(mode, model.routing, pt, ct, "infer", rng)
            expected.append(ledger.expected(np.asarray(routing.w)[0]))
            sampled.append(ledger.dynamic(np.asarray(routing.v.data)[0]))
        print(ledger.to_text())
        print(f"beta: {args.beta}")
        print(f"expected dynamic (mean over {len(clips)} clips): {np.mean(expected) / 1e6:.3f} MFLOPs")
        print(f"sampled dynamic  (mean over {len(clips)} clips): {np.mean(sampled) / 1e6:.3f} MFLOPs")
    else:
        ledger = model_ledger(model, args.height, args.width)
        print(ledger.to_text())
        print(f"beta: {args.beta}")
    return 0


def _cmd_route_stats(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    clips = load_dataset(args.manifest)
    mode = RoutingMode(kind=args.mode, beta=args.beta)
    rng = np.random.default_rng(args.seed)
    try:
        stats = usage_rate(model, clips, mode, rng=rng, by=args.by)
    except ValueError as e:
        raise DataError(str(e))
    print("usage rate x100 per block")
    print(stats.to_text())
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "flops": _cmd_flops,
    "route-stats": _cmd_route_stats,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
