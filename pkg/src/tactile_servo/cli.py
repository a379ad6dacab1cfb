"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 runtime pipeline error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .correspondence import CorrespondenceOpts, NoContactError, correspond
from .descriptor import (DescriptorFileError, DescriptorParams, extract,
                         load_descriptor_file, save_descriptor_file)
from .displacement import Displacement, estimate_displacement
from .gel_sim import PlantState, load_scene, render
from .sensor_core import (KeypointSet, SensorCalibration, load_goal_spec,
                          load_image, save_image)
from .servo_loop import ServoConfig, run_servo


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


class PipelineError(RuntimeError):
    pass


def _load_cal(path) -> SensorCalibration:
    if path is None:
        return SensorCalibration()
    return SensorCalibration.from_dict(json.loads(Path(path).read_text()))


def _load_keypoints(path) -> KeypointSet:
    doc = json.loads(Path(path).read_text())
    pts = doc["keypoints"] if isinstance(doc, dict) else doc
    return KeypointSet(np.array(pts, dtype=np.float64))


def _descriptor_map(path, params):
    p = Path(path)
    if p.suffix.lower() == ".tdsc":
        return load_descriptor_file(p)
    return extract(load_image(p), params)


def _emit(doc: dict, out, fmt: str) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_render(args) -> int:
    scene = load_scene(args.scene)
    cal = _load_cal(args.cal)
    offset = Displacement(*args.offset)
    img = render(scene, offset, cal, seed=args.seed)
    save_image(img, args.out)
    return 0


def cmd_extract(args) -> int:
    params = DescriptorParams(stride=args.stride)
    img = load_image(args.image, _load_cal(args.cal) if args.cal else None)
    dmap = extract(img, params)
    save_descriptor_file(dmap, args.out)
    return 0


def cmd_match(args) -> int:
    params = DescriptorParams(stride=args.stride)
    goal_map = _descriptor_map(args.goal, params)
    cur_map = _descriptor_map(args.current, params)
    keypoints = _load_keypoints(args.keypoints)
    opts = CorrespondenceOpts(s_min=args.s_min, r_min=args.r_min)
    try:
        matches = correspond(goal_map, cur_map, keypoints, opts)
    except NoContactError as e:
        raise PipelineError(str(e)) from e
    _emit({"matches": [m.to_dict() for m in matches]}, args.out, args.format)
    return 0


def cmd_estimate(args) -> int:
    doc = json.loads(Path(args.matches).read_text())
    matches = doc["matches"] if isinstance(doc, dict) else doc
    if not matches:
        raise PipelineError("no matches to estimate from")
    k_g = KeypointSet(np.array([m["goal_point"] for m in matches]))
    k_c = KeypointSet(np.array([m["found_point"] for m in matches]))
    est = estimate_displacement(k_g, k_c, _load_cal(args.cal), mode=args.mode)
    out = est.displacement.to_dict()
    out["degenerate"] = est.degenerate
    _emit(out, args.out, args.format)
    return 0


def cmd_servo(args) -> int:
    goal = load_goal_spec(args.goal_spec)
    scene = load_scene(args.scene)
    plant = PlantState(scene=scene, true_offset=Displacement(*args.offset),
                       actuation_noise=tuple(args.actuation_noise),
                       rng_seed=args.seed)
    cfg = ServoConfig(max_iterations=args.max_iterations,
                      keep_images=args.dump_images is not None)
    result = run_servo(goal, plant, cfg)
    if args.dump_images:
        dump = Path(args.dump_images)
        dump.mkdir(parents=True, exist_ok=True)
        for it in result.iterations:
            if it.image is not None:
                save_image(it.image, dump / f"iteration_{it.index:02d}.png")
    _emit(result.to_dict(), args.out, args.format)
    return 0 if result.outcome in ("success", "max_iterations_exceeded") else 2


def _experiment_config(args) -> harness.ExperimentConfig:
    overrides = {}
    if args.config:
        overrides.update(json.loads(Path(args.config).read_text()))
    preset = overrides.pop("preset", args.preset)
    if args.trials is not None:
        overrides["trial_count"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if "actuation_noise" in overrides:
        overrides["actuation_noise"] = tuple(overrides["actuation_noise"])
    try:
        return harness.default_experiment_config(preset, **overrides)
    except TypeError as e:
        raise harness.ConfigError(str(e)) from e


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    report = harness.run_perturbation_experiment(cfg, out_dir=args.out)
    print(f"perturbation: N={report.stats.n} d_error={report.stats.d_error:.4f} mm "
          f"std={report.stats.std_dev:.4f} mm failed={len(report.failed_trials)}")
    return 0


def cmd_scenario(args) -> int:
    cfg = _experiment_config(args)
    report = harness.run_task_scenario(args.name, cfg, out_dir=args.out)
    print(f"{args.name}: {report.successes}/{report.n_trials} succeeded "
          f"(rate {report.success_rate:.2f})")
    return 0


def cmd_summarize(args) -> int:
    paths = []
    for p in args.reports:
        p = Path(p)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.json")))
        else:
            paths.append(p)
    table, doc = harness.summarize(paths)
    if args.format == "json":
        _emit(doc, args.out, args.format)
    else:
        print(table)
        if args.out:
            Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="tactile-servo",
                description="visuo-tactile keypoint servo pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, seed_default=0):
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", default=None)
        sp.add_argument("--format", choices=["json", "csv"], default="json")
        sp.add_argument("--config", default=None)

    sp = sub.add_parser("render", help="render a scene to a PNG")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--offset", type=float, nargs=3, default=[0.0, 0.0, 0.0],
                    metavar=("DX_MM", "DZ_MM", "DTHETA_RAD"))
    sp.add_argument("--cal", default=None)
    add_common(sp)
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("extract", help="dense descriptors to a TDSC file")
    sp.add_argument("--image", required=True)
    sp.add_argument("--stride", type=int, default=4)
    sp.add_argument("--cal", default=None)
    add_common(sp)
    sp.set_defaults(fn=cmd_extract)

    sp = sub.add_parser("match", help="keypoint correspondences between two images")
    sp.add_argument("--goal", required=True, help="goal image or .tdsc file")
    sp.add_argument("--current", required=True, help="current image or .tdsc file")
    sp.add_argument("--keypoints", required=True, help="JSON [[u,v],...]")
    sp.add_argument("--stride", type=int, default=4)
    sp.add_argument("--s-min", type=float, default=0.7)
    sp.add_argument("--r-min", type=float, default=1.05)
    add_common(sp)
    sp.set_defaults(fn=cmd_match)

    sp = sub.add_parser("estimate", help="displacement from a match JSON")
    sp.add_argument("--matches", required=True)
    sp.add_argument("--mode", choices=["rigid_2d", "translation_only"],
                    default="rigid_2d")
    sp.add_argument("--cal", default=None)
    add_common(sp)
    sp.set_defaults(fn=cmd_estimate)

    sp = sub.add_parser("servo", help="run the adjustment loop on a simulated plant")
    sp.add_argument("--goal-spec", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--offset", type=float, nargs=3, default=[0.0, 0.0, 0.0],
                    metavar=("DX_MM", "DZ_MM", "DTHETA_RAD"))
    sp.add_argument("--actuation-noise", type=float, nargs=3,
                    default=[0.0, 0.0, 0.0])
    sp.add_argument("--max-iterations", type=int, default=5)
    sp.add_argument("--dump-images", default=None)
    add_common(sp)
    sp.set_defaults(fn=cmd_servo)

    sp = sub.add_parser("experiment", help="random-perturbation estimation experiment")
    sp.add_argument("--preset", default="gear")
    sp.add_argument("--trials", type=int, default=None)
    add_common(sp, seed_default=None)
    sp.set_defaults(fn=cmd_experiment)

    sp = sub.add_parser("scenario", help="servo task scenario batch")
    sp.add_argument("--name", required=True,
                    choices=["gear_insertion", "block_alignment"])
    sp.add_argument("--preset", default=None)
    sp.add_argument("--trials", type=int, default=None)
    add_common(sp, seed_default=None)
    sp.set_defaults(fn=cmd_scenario)

    sp = sub.add_parser("summarize", help="aggregate report files")
    sp.add_argument("reports", nargs="+")
    add_common(sp)
    sp.set_defaults(fn=cmd_summarize)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "scenario" and args.preset is None:
        args.preset = args.name
    try:
        return args.fn(args)
    except (harness.ConfigError, FileNotFoundError, json.JSONDecodeError,
            KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (PipelineError, harness.ReportError, DescriptorFileError,
            NoContactError, ValueError) as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
