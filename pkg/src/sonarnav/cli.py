"""Command-line front end: validate, run, batch, bench-planner, render."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .controller import (DEFAULT_GOALS, ControllerError, MissionConfig,
                         MissionFailed, run_batch, run_mission, sample_start_pose)
from .geometry import (ArenaMap, InvalidMapError, Point2, Pose, bundled_map,
                       bundled_map_names, inset_polygon, validate_map_data)
from .localization import FilterConfig
from .planning import NoPathFound, PlanConfig, astar_plan, plan_path, turn_count
from .plant import MotionNoise, SafetyConfig
from .sensor import SensorModel, scan_from_csv
from .svg import LAYERS, RenderError, render_svg

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INPUT = 2
EXIT_MISSION = 3

# Every config key with its parser and default; an empty config file is valid.
CONFIG_KEYS = {
    "filter.particle_count": (int, 1000),
    "filter.sigma": (float, 2.0),
    "filter.jitter_xy": (float, 2.0),
    "filter.jitter_theta": (float, 0.05),
    "filter.convergence_radius": (float, 2.0),
    "filter.max_iterations": (int, 10),
    "plan.sample_count": (int, 30),
    "plan.max_intermediates": (int, 4),
    "sensor.sigma": (float, 1.0),
    "sensor.max_range": (float, 255.0),
    "sensor.incidence_gain": (float, 0.0),
    "sensor.dropout_prob": (float, 0.0),
    "sensor.resolution_deg": (float, 1.0),
    "noise.move_sigma": (float, 0.1),
    "noise.turn_sigma": (float, 0.005),
    "noise.drift_sigma": (float, 0.0),
    "safety.stop_threshold": (float, 4.0),
    "safety.backup_distance": (float, 5.0),
    "mission.max_replans": (int, 5),
    "mission.robot_radius": (float, 8.0),
    "mission.goal_x": (float, None),
    "mission.goal_y": (float, None),
    "mission.start_x": (float, None),
    "mission.start_y": (float, None),
    "mission.start_theta_deg": (float, None),
}


class ConfigError(Exception):
    pass


def parse_config_file(path) -> dict:
    """Parse 'dotted.key = value' lines; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            parser, _ = CONFIG_KEYS[key]
            try:
                values[key] = parser(value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return values


def build_mission_config(values: dict, seed: int) -> MissionConfig:
    def get(key):
        return values.get(key, CONFIG_KEYS[key][1])

    goal = None
    if get("mission.goal_x") is not None and get("mission.goal_y") is not None:
        goal = Point2(get("mission.goal_x"), get("mission.goal_y"))
    return MissionConfig(
        filter=FilterConfig(
            particle_count=get("filter.particle_count"),
            sigma=get("filter.sigma"),
            jitter_xy=get("filter.jitter_xy"),
            jitter_theta=get("filter.jitter_theta"),
            convergence_radius=get("filter.convergence_radius"),
            max_iterations=get("filter.max_iterations"),
        ),
        plan=PlanConfig(
            sample_count=get("plan.sample_count"),
            max_intermediates=get("plan.max_intermediates"),
        ),
        sensor=SensorModel(
            sigma=get("sensor.sigma"),
            max_range=get("sensor.max_range"),
            incidence_gain=get("sensor.incidence_gain"),
            dropout_prob=get("sensor.dropout_prob"),
        ),
        noise=MotionNoise(
            move_sigma=get("noise.move_sigma"),
            turn_sigma=get("noise.turn_sigma"),
            drift_sigma=get("noise.drift_sigma"),
        ),
        safety=SafetyConfig(
            stop_threshold=get("safety.stop_threshold"),
            backup_distance=get("safety.backup_distance"),
        ),
        goal=goal,
        max_replans=get("mission.max_replans"),
        seed=seed,
        robot_radius=get("mission.robot_radius"),
        scan_resolution=math.radians(get("sensor.resolution_deg")),
    )


def config_start_pose(values: dict) -> Pose | None:
    x = values.get("mission.start_x")
    y = values.get("mission.start_y")
    if x is None or y is None:
        return None
    theta = math.radians(values.get("mission.start_theta_deg") or 0.0)
    return Pose(Point2(x, y), theta)


def _load_map(spec: str) -> tuple[str, ArenaMap]:
    """Accept a bundled map name or a JSON file path."""
    if spec in bundled_map_names():
        return spec, bundled_map(spec)
    name = os.path.splitext(os.path.basename(spec))[0]
    with open(spec, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return name, ArenaMap.from_json(data)


def _fail(message: str, code: int) -> int:
    print(message, file=sys.stderr)
    return code


def cmd_validate(args) -> int:
    try:
        with open(args.map, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"parse error: {exc}", EXIT_INPUT)
    if not isinstance(data, dict) or "boundary" not in data:
        return _fail("parse error: map JSON must be an object with a 'boundary' key",
                     EXIT_INPUT)
    problems = validate_map_data(data["boundary"], data.get("obstacles", []))
    if problems:
        for p in problems:
            print(p)
        return EXIT_INVALID
    print("OK")
    return EXIT_OK


def _prepare_run(args):
    values = parse_config_file(args.config) if args.config else {}
    name, arena = _load_map(args.map)
    return name, arena, values


def cmd_run(args) -> int:
    try:
        name, arena, values = _prepare_run(args)
        config = build_mission_config(values, args.seed)
        if config.goal is None:
            goal = DEFAULT_GOALS.get(name)
            if goal is None:
                return _fail(f"no goal configured and no default goal for map {name!r}",
                             EXIT_INPUT)
            from dataclasses import replace
            config = replace(config, goal=goal)
        start = config_start_pose(values)
        if start is None:
            start_rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0, 0x5EED]))
            start = sample_start_pose(arena, start_rng, config.robot_radius + 2.0)
        trace_path = None
        if args.out:
            try:
                os.makedirs(args.out, exist_ok=True)
                probe = os.path.join(args.out, ".write_probe")
                with open(probe, "w", encoding="utf-8"):
                    pass
                os.remove(probe)
            except OSError as exc:
                return _fail(f"output directory not writable: {exc}", EXIT_INPUT)
            trace_path = os.path.join(args.out, f"run_{name}_seed{args.seed}.csv")
    except (ConfigError, InvalidMapError, OSError, json.JSONDecodeError, ValueError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    try:
        report = run_mission(arena, start, config, trace_path)
    except MissionFailed as failed:
        print(json.dumps(failed.report.to_json(), indent=2, sort_keys=True))
        print(f"mission failed: {failed}", file=sys.stderr)
        return EXIT_MISSION
    except ControllerError as exc:
        return _fail(str(exc), EXIT_INPUT)
    payload = report.to_json()
    payload["map"] = name
    payload["seed"] = args.seed
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        with open(os.path.join(args.out, f"report_{name}_seed{args.seed}.json"),
                  "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ":" in text:
        lo, _, hi = text.partition(":")
        seeds = list(range(int(lo), int(hi)))
    elif "," in text:
        seeds = [int(t) for t in text.split(",") if t.strip()]
    elif text:
        seeds = [int(text)]
    else:
        seeds = []
    if not seeds:
        raise ConfigError("empty seed list")
    return seeds


def cmd_batch(args) -> int:
    try:
        seeds = _parse_seeds(args.seeds)
        values = parse_config_file(args.config) if args.config else {}
        config = build_mission_config(values, 0)
        maps = [_load_map(spec) for spec in args.map]
        start = config_start_pose(values)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
    except (ConfigError, InvalidMapError, OSError, json.JSONDecodeError, ValueError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    try:
        summary = run_batch(maps, config, seeds, out_dir=args.out, start=start)
    except ControllerError as exc:
        return _fail(str(exc), EXIT_INPUT)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_bench_planner(args) -> int:
    try:
        maps = [_load_map(spec) for spec in args.map]
        if args.trials < 1:
            raise ConfigError("need at least one trial")
    except (ConfigError, InvalidMapError, OSError, json.JSONDecodeError, ValueError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    rows = []
    totals = {"trials": 0, "both_found": 0, "sampling_shorter_or_equal": 0,
              "sampling_fewer_or_equal_turns": 0}
    plan_cfg = PlanConfig(sample_count=args.samples)
    for name, arena in maps:
        try:
            cspace = inset_polygon(arena, args.inset)
        except Exception as exc:
            return _fail(f"cannot build C-space for {name}: {exc}", EXIT_INPUT)
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, len(rows), 0xBE7C]))
        for trial in range(args.trials):
            from .planning import sample_free_points

            pts = sample_free_points(cspace, 2, rng)
            start, goal = Point2(*pts[0]), Point2(*pts[1])
            row = {"map": name, "trial": trial,
                   "start_x": round(start.x, 6), "start_y": round(start.y, 6),
                   "goal_x": round(goal.x, 6), "goal_y": round(goal.y, 6)}
            totals["trials"] += 1
            try:
                path = plan_path(start, goal, cspace, plan_cfg, rng)
                row.update(sampling_length=round(path.length, 6),
                           sampling_turns=turn_count(path),
                           sampling_intermediates=path.intermediates)
            except NoPathFound:
                row.update(sampling_length="", sampling_turns="", sampling_intermediates="")
            try:
                grid = astar_plan(start, goal, cspace, args.resolution)
                row.update(astar_length=round(grid.length, 6), astar_turns=turn_count(grid))
            except NoPathFound:
                row.update(astar_length="", astar_turns="")
            if row["sampling_length"] != "" and row["astar_length"] != "":
                totals["both_found"] += 1
                if row["sampling_length"] <= row["astar_length"] + 1e-9:
                    totals["sampling_shorter_or_equal"] += 1
                if row["sampling_turns"] <= row["astar_turns"]:
                    totals["sampling_fewer_or_equal_turns"] += 1
            rows.append(row)
    if args.out:
        try:
            with open(args.out, "w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                writer.writeheader()
                writer.writerows(rows)
        except OSError as exc:
            return _fail(f"cannot write {args.out}: {exc}", EXIT_INPUT)
    both = max(totals["both_found"], 1)
    print(json.dumps({
        "trials": totals["trials"],
        "both_found": totals["both_found"],
        "sampling_shorter_or_equal_rate": round(totals["sampling_shorter_or_equal"] / both, 6),
        "sampling_fewer_or_equal_turns_rate": round(
            totals["sampling_fewer_or_equal_turns"] / both, 6),
    }, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_render(args) -> int:
    try:
        name, arena = _load_map(args.map)
        layers = [layer.strip() for layer in args.layers.split(",") if layer.strip()]
        kwargs = {}
        if "cspace" in layers:
            kwargs["cspace"] = inset_polygon(arena, args.inset)
        if "scan" in layers:
            if not args.scan or not args.pose:
                return _fail("scan layer needs --scan CSV and --pose X,Y,THETA_DEG",
                             EXIT_INPUT)
            x, y, theta_deg = (float(t) for t in args.pose.split(","))
            kwargs["scan"] = scan_from_csv(args.scan)
            kwargs["scan_pose"] = Pose(Point2(x, y), math.radians(theta_deg))
        if "particles" in layers:
            if not args.particles:
                return _fail("particles layer needs --particles CSV", EXIT_INPUT)
            kwargs["particles"] = np.loadtxt(args.particles, delimiter=",", skiprows=1,
                                             ndmin=2)
        if "planned-path" in layers:
            if not args.path:
                return _fail("planned-path layer needs --path JSON", EXIT_INPUT)
            with open(args.path, "r", encoding="utf-8") as fh:
                kwargs["path_waypoints"] = json.load(fh)["waypoints"]
        if "executed-path" in layers:
            if not args.trace:
                return _fail("executed-path layer needs --trace CSV", EXIT_INPUT)
            pts = []
            with open(args.trace, "r", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    if row["truth_x"]:
                        pts.append((float(row["truth_x"]), float(row["truth_y"])))
            kwargs["executed"] = np.asarray(pts)
        text = render_svg(arena, layers, scale=args.scale, **kwargs)
    except (RenderError, InvalidMapError, OSError, json.JSONDecodeError,
            ValueError, KeyError) as exc:
        return _fail(str(exc), EXIT_INPUT)
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        return _fail(f"cannot write {args.out}: {exc}", EXIT_INPUT)
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sonarnav",
        description="Ultrasonic-only robot localisation and navigation simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a map file's invariants")
    p.add_argument("--map", required=True, help="map JSON file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one seeded mission")
    p.add_argument("--map", required=True, help="bundled map name or JSON file")
    p.add_argument("--config", help="key = value mission config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for trace and report files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run a seeded mission batch")
    p.add_argument("--map", required=True, action="append",
                   help="map (repeatable): bundled name or JSON file")
    p.add_argument("--config", help="key = value mission config file")
    p.add_argument("--seeds", required=True,
                   help="seed list: '0:20' range, '1,2,3' list, or single int")
    p.add_argument("--out", help="directory for per-run CSVs and summary JSON")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("bench-planner", help="compare sampling planner vs grid A*")
    p.add_argument("--map", required=True, action="append")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=30, help="planner sample count")
    p.add_argument("--inset", type=float, default=8.0, help="C-space offset (cm)")
    p.add_argument("--resolution", type=float, default=5.0, help="A* grid step (cm)")
    p.add_argument("--out", help="per-trial comparison CSV")
    p.set_defaults(func=cmd_bench_planner)

    p = sub.add_parser("render", help="render layers to a static SVG")
    p.add_argument("--map", required=True)
    p.add_argument("--layers", required=True,
                   help="comma list from: " + ", ".join(LAYERS))
    p.add_argument("--out", required=True, help="output SVG file")
    p.add_argument("--scale", type=float, default=4.0, help="pixels per cm")
    p.add_argument("--inset", type=float, default=8.0, help="C-space offset (cm)")
    p.add_argument("--scan", help="scan CSV (angle_deg, range_cm)")
    p.add_argument("--pose", help="scan pose as X,Y,THETA_DEG")
    p.add_argument("--particles", help="particle CSV (x, y, theta, weight)")
    p.add_argument("--path", help="path JSON")
    p.add_argument("--trace", help="mission trace CSV")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
