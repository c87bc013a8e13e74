"""Command-line interface: simulate | run | eval | ablate.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import detector, pipeline
from .config import ConfigError, RunConfig, config_to_dict, validate_config
from .errors import CapacityError
from .metrics import evaluate
from .scenesim import scene_from_dict

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_config(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    cfg = validate_config(text)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "scenes", None) is not None:
        overrides["scenes"] = args.scenes
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


def _progress(total, every=10):
    def report(i):
        if (i + 1) % every == 0 or i + 1 == total:
            print(f"  scene {i + 1}/{total}", file=sys.stderr)

    return report


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    paths = pipeline.simulate(cfg, args.out, progress=_progress(cfg.scenes))
    print(f"wrote {len(paths)} scene files to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report, _ = pipeline.run(cfg, out_dir=args.out, jobs=args.jobs,
                             progress=_progress(cfg.scenes))
    print(json.dumps(report.to_dict(), indent=1))
    print(f"report written to {Path(args.out) / 'metrics.json'}")
    return 0


def cmd_eval(args) -> int:
    scene_files = sorted(Path(args.scenes_dir).glob("scene-*.json"))
    det_files = sorted(Path(args.detections).glob("scene-*.json"))
    if len(scene_files) != len(det_files):
        print(
            f"error: {len(scene_files)} scenes but {len(det_files)} detection files",
            file=sys.stderr,
        )
        return EXIT_RUNTIME
    samples = []
    for sf, df in zip(scene_files, det_files):
        scene = scene_from_dict(json.loads(sf.read_text()))
        boxes, _, seed = detector.load_detections(df)
        if seed != scene.seed:
            print(f"error: seed mismatch between {sf.name} and {df.name}", file=sys.stderr)
            return EXIT_RUNTIME
        gts = [
            detector.Box3D(o.center, o.size, o.yaw, o.velocity, o.cls, 1.0)
            for o in scene.objects
        ]
        samples.append((boxes, gts))
    report = evaluate(samples)
    doc = report.to_dict()
    print(json.dumps(doc, indent=1))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(doc, indent=1))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    try:
        report = pipeline.ablate(cfg, axes, out_dir=args.out, jobs=args.jobs,
                                 progress=_progress(cfg.scenes))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    width = max(len(label) for label, _, _ in report.rows)
    print(f"{'label'.ljust(width)}  {'mAP':>6}  {'NDS':>6}  {'delta_mAP':>9}")
    for label, rep, delta in report.rows:
        print(f"{label.ljust(width)}  {rep.mAP:6.3f}  {rep.NDS:6.3f}  {delta:+9.3f}")
    print(f"table written to {Path(args.out) / 'ablation.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevcollab",
        description="Aerial-ground collaborative BEV perception sandbox",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, jobs=True):
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--scenes", type=int, help="override the scene count")
        p.add_argument("--out", required=True, help="output directory")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="parallel scene workers")

    p_sim = sub.add_parser("simulate", help="generate and store the scene set")
    common(p_sim, jobs=False)
    p_sim.set_defaults(func=cmd_simulate)

    p_run = sub.add_parser("run", help="run the full pipeline and evaluate")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="re-evaluate stored detections against scenes")
    p_eval.add_argument("--scenes-dir", required=True, help="directory of scene-*.json files")
    p_eval.add_argument("--detections", required=True, help="directory of detection files")
    p_eval.add_argument("--out", help="optional output directory for metrics.json")
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="sweep module toggles on a shared scene set")
    common(p_abl)
    p_abl.add_argument(
        "--axes", required=True,
        help=f"comma-separated subset of {', '.join(pipeline.AXES)}",
    )
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except CapacityError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
