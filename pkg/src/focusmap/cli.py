"""Command-line entry point: synth, train, maps, baseline, eval, gradcheck, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .errors import FocusError

log = logging.getLogger("focusmap")


def _echo(kind: str, payload: dict) -> None:
    print(json.dumps({kind: payload}, sort_keys=True), flush=True)


def cmd_synth(args: argparse.Namespace) -> int:
    from .dataset import write_synthetic_dataset
    from .imaging import SyntheticSpec

    spec = SyntheticSpec(image_size=args.size, patch_area_frac=args.patch_area,
                         global_noise_sigma=args.noise, blend_width=args.blend, seed=args.seed)
    _echo("synth", {**spec.__dict__, "count": args.count, "out": str(args.out)})
    entries = write_synthetic_dataset(args.out, spec, args.count)
    log.info("wrote %d samples to %s", len(entries), args.out)
    return 0


def _train_config(args: argparse.Namespace):
    from .trainer import TrainConfig

    data = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("seed", "iterations", "learning_rate"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    return TrainConfig.from_dict(data)


def cmd_train(args: argparse.Namespace) -> int:
    from .dataset import load_dataset
    from .trainer import train

    config = _train_config(args)
    _echo("config", config.to_dict())
    data = load_dataset(args.data)
    log_file = open(args.log, "w") if args.log else None
    started = time.time()

    def on_step(record: dict) -> None:
        if log_file is not None:
            log_file.write(json.dumps(record) + "\n")
        if args.verbose and (record["step"] % 100 == 0 or record["step"] == config.iterations - 1):
            log.info("step %d total %.4f", record["step"], record["total"])

    try:
        if log_file is not None:
            log_file.write(json.dumps({"config": config.to_dict()}) + "\n")
        result = train(config, data, on_step=on_step)
    finally:
        if log_file is not None:
            log_file.close()
    result.checkpoint.save(args.out)
    first, last = result.history[0]["total"], result.history[-1]["total"]
    _echo("train", {"checkpoint": str(args.out), "sha256": result.checkpoint.digest(),
                    "initial_total": first, "final_total": last,
                    "seconds": round(time.time() - started, 1)})
    return 0


def cmd_maps(args: argparse.Namespace) -> int:
    from .dataset import load_dataset
    from .trainer import Checkpoint, generate_maps, write_map_set

    ckpt = Checkpoint.load(args.checkpoint)
    data = load_dataset(args.data)
    records = generate_maps(ckpt, data, fake_only=args.fake_only)
    write_map_set(records, args.out, checkpoint_hash=ckpt.digest())
    _echo("maps", {"checkpoint": str(args.checkpoint), "fake_only": args.fake_only,
                   "count": len(records), "out": str(args.out)})
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    from .dataset import load_dataset
    from .trainer import baseline_maps, write_map_set

    data = load_dataset(args.data)
    records = baseline_maps(data, args.method)
    write_map_set(records, args.out)
    _echo("baseline", {"method": args.method, "count": len(records), "out": str(args.out)})
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .dataset import load_dataset
    from .evalharness import EvalConfig, format_table, train_eval_model

    data = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.seed is not None:
        data["seed"] = args.seed
    if args.iterations is not None:
        data["iterations"] = args.iterations
    config = EvalConfig.from_dict(data)
    _echo("config", config.__dict__)
    report = train_eval_model(args.maps, load_dataset(args.data), config, source=args.source)
    if args.out:
        report.save(args.out)
    print(format_table([report]))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from .trainer import TINY_CONFIG, TrainConfig, focus_grad_check

    config = TrainConfig.from_json(args.config) if args.config else TrainConfig(**TINY_CONFIG)
    _echo("config", config.to_dict())
    started = time.time()
    result = focus_grad_check(config, n_samples=args.samples, eps=args.eps, seed=args.seed,
                              param_std=None if args.param_std <= 0 else args.param_std)
    ok = bool(result.max_rel_error < args.tolerance)
    _echo("gradcheck", {"max_rel_error": float(result.max_rel_error), "worst_index": result.worst_index,
                        "n_checked": result.n_checked, "tolerance": args.tolerance, "passed": ok,
                        "seconds": round(time.time() - started, 2)})
    return 0 if ok else 1


def cmd_report(args: argparse.Namespace) -> int:
    from .evalharness import EvalReport, format_table

    paths = []
    for p in args.reports:
        p = Path(p)
        paths.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    reports = [EvalReport.load(p) for p in paths]
    if not reports:
        raise FocusError("no reports found")
    print(format_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="focusmap", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic spliced-forgery dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--count", type=int, default=2000, help="number of real/fake pairs")
    p.add_argument("--size", type=int, default=32, help="image side in pixels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-area", type=float, default=0.2, help="spliced area as a fraction of the image")
    p.add_argument("--noise", type=float, default=0.05, help="global noise sigma added to fakes")
    p.add_argument("--blend", type=int, default=2, help="blend width in pixels at the splice border")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the map generator", formatter_class=fmt)
    p.add_argument("--data", required=True, type=Path, help="dataset directory")
    p.add_argument("--out", required=True, type=Path, help="checkpoint file to write")
    p.add_argument("--config", type=Path, default=None, help="JSON file with training config fields")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--iterations", type=int, default=None, help="overrides the config iterations")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None,
                   help="overrides the config learning rate")
    p.add_argument("--log", type=Path, default=None, help="JSON-lines loss log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("maps", help="export maps from a trained checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--fake-only", action="store_true",
                   help="raw fake-class maps for every sample instead of supervision maps")
    p.set_defaults(func=cmd_maps)

    p = sub.add_parser("baseline", help="export comparison-based maps", formatter_class=fmt)
    p.add_argument("--method", required=True, choices=["ssim", "pixdiff", "pixdiff@0.1", "gt", "zero"])
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="train and score the evaluation model on a map set", formatter_class=fmt)
    p.add_argument("--maps", required=True, type=Path, help="map directory used as supervision")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None, help="report JSON to write")
    p.add_argument("--config", type=Path, default=None, help="JSON file with eval config fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--source", default=None, help="label for the report (defaults to the map generator)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective", formatter_class=fmt)
    p.add_argument("--config", type=Path, default=None, help="JSON training config (defaults to the tiny one)")
    p.add_argument("--samples", type=int, default=256, help="parameters checked")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param-std", type=float, default=0.3,
                   help="redraw parameters at this std before checking (0 keeps the init)")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="merge eval reports into one table", formatter_class=fmt)
    p.add_argument("reports", nargs="+", help="report JSON files or directories of them")
    p.set_defaults(func=cmd_report)
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FocusError, OSError, ValueError, KeyError) as exc:
        print(f"focusmap {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
