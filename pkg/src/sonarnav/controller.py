"""Closed-loop missions: localise, plan, follow waypoints, recover, re-localise."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (ArenaMap, InsetDegenerate, Point2, Pose, inset_polygon,
                       point_in_free_space, points_in_free_space, wrap_to_pi,
                       _point_segment_distances)
from .localization import (FilterConfig, LocalizationFailed, localize)
from .planning import NoPathFound, PlanConfig, Path, plan_path
from .plant import (MotionNoise, MoveOutcome, RobotInterface, SafetyConfig,
                    SimulatedRobot, WorldState)
from .sensor import SensorModel

# Goals used by the batch harness when the config does not name one.
DEFAULT_GOALS = {
    "mapa": Point2(80.0, 80.0),
    "mapb": Point2(85.0, 40.0),
    "mapc": Point2(19.0, 80.0),
}

PLAN_RETRIES = 3


class ControllerError(Exception):
    pass


class MissionFailed(ControllerError):
    """Mission could not finish; carries the report assembled at failure."""

    def __init__(self, message: str, report: "MissionReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class MissionConfig:
    filter: FilterConfig = field(default_factory=FilterConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    sensor: SensorModel = field(default_factory=SensorModel)
    noise: MotionNoise = field(default_factory=MotionNoise)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    goal: Point2 | None = None
    max_replans: int = 5
    seed: int = 0
    robot_radius: float = 8.0
    scan_resolution: float = math.radians(1.0)


@dataclass(frozen=True)
class MissionReport:
    reached: bool
    final_error: float
    path_length_executed: float
    collisions_detected: int
    replans: int
    localization_iterations: int
    sim_steps: int

    def to_json(self) -> dict:
        return {
            "reached": self.reached,
            "final_error": round(self.final_error, 9),
            "path_length_executed": round(self.path_length_executed, 9),
            "collisions_detected": self.collisions_detected,
            "replans": self.replans,
            "localization_iterations": self.localization_iterations,
            "sim_steps": self.sim_steps,
        }


class _Abort(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def waypoint_follow(robot: RobotInterface, believed: Pose,
                    waypoint) -> tuple[Pose, MoveOutcome]:
    """Turn toward the waypoint, drive the straight leg, dead-reckon commanded
    values (realized error is what the next localisation corrects)."""
    wx, wy = float(waypoint[0]), float(waypoint[1])
    dx = wx - believed.position.x
    dy = wy - believed.position.y
    distance = math.hypot(dx, dy)
    bearing = math.atan2(dy, dx) if distance > 1e-12 else believed.heading
    robot.turn(wrap_to_pi(bearing - believed.heading))
    outcome = robot.move(distance)
    return Pose(Point2(wx, wy), bearing), outcome


def _cspace_anchor(position: Point2, cspace: ArenaMap, arena: ArenaMap) -> Point2:
    """Nearest plannable point: the estimate may sit closer to a wall than the
    C-space margin (e.g. right after a turnback)."""
    if point_in_free_space(position, cspace):
        return position
    from .geometry import segment_clear

    for radius in np.arange(1.0, 30.0, 1.0):
        for k in range(16):
            angle = k * math.pi / 8.0
            cand = Point2(position.x + radius * math.cos(angle),
                          position.y + radius * math.sin(angle))
            if point_in_free_space(cand, cspace) and segment_clear(position, cand, arena):
                return cand
    raise _Abort("estimate is stranded outside the configuration space")


def _plan_with_retries(start: Point2, goal: Point2, cspace: ArenaMap,
                       config: PlanConfig, rng: np.random.Generator) -> Path:
    cfg = config
    for attempt in range(PLAN_RETRIES + 1):
        try:
            return plan_path(start, goal, cspace, cfg, rng)
        except NoPathFound:
            if attempt == PLAN_RETRIES:
                raise
            cfg = replace(cfg, sample_count=cfg.sample_count * 2)


def drive_mission(robot: RobotInterface, arena: ArenaMap, config: MissionConfig,
                  rng: np.random.Generator) -> dict:
    """Interface-only mission core; sees the robot solely through commands."""
    if config.goal is None:
        raise ControllerError("mission config has no goal")
    goal = Point2(float(config.goal[0]), float(config.goal[1]))
    try:
        cspace = inset_polygon(arena, config.robot_radius)
    except InsetDegenerate as exc:
        raise ControllerError(f"configuration space is empty: {exc}") from exc
    if not point_in_free_space(goal, cspace):
        raise ControllerError(f"goal {tuple(goal)} is not in free configuration space")

    state = {"collisions": 0, "replans": 0, "loc_iterations": 0, "events": [],
             "planned_length": 0.0, "reached": False}
    try:
        return _drive(robot, arena, config, goal, cspace, rng, state)
    except _Abort as abort:
        abort.partial = state
        raise


def _drive(robot: RobotInterface, arena: ArenaMap, config: MissionConfig,
           goal: Point2, cspace: ArenaMap, rng: np.random.Generator,
           state: dict) -> dict:
    def note(kind: str, pose: Pose | None = None) -> None:
        step = getattr(robot, "sim_steps", len(state["events"]))
        if pose is None:
            state["events"].append((step, kind, "", "", ""))
        else:
            state["events"].append((step, kind, f"{pose.position.x:.6f}",
                                    f"{pose.position.y:.6f}", f"{pose.heading:.6f}"))

    def fix() -> Pose:
        try:
            result = localize(robot, arena, config.filter, rng, config.noise)
        except LocalizationFailed as exc:
            raise _Abort(f"localization failed irrecoverably: {exc}") from exc
        state["loc_iterations"] += result.iterations
        note("localized", result.estimate.pose)
        return result.estimate.pose

    def plan_from(believed: Pose) -> Path:
        anchor = _cspace_anchor(believed.position, cspace, arena)
        try:
            path = _plan_with_retries(anchor, goal, cspace, config.plan, rng)
        except NoPathFound as exc:
            raise _Abort(f"planning failed: {exc}") from exc
        state["planned_length"] = path.length
        note("planned")
        return path

    believed = fix()
    path = plan_from(believed)
    queue = [wp for wp in path.waypoints
             if math.hypot(wp.x - believed.position.x, wp.y - believed.position.y) > 1e-9]
    while queue:
        waypoint = queue[0]
        believed, outcome = waypoint_follow(robot, believed, waypoint)
        triggered = robot.turnback()
        if outcome.near_wall or triggered:
            state["collisions"] += 1
            note("collision")
            if state["replans"] >= config.max_replans:
                raise _Abort("replan budget exhausted")
            state["replans"] += 1
            believed = fix()
            path = plan_from(believed)
            queue = [wp for wp in path.waypoints
                     if math.hypot(wp.x - believed.position.x,
                                   wp.y - believed.position.y) > 1e-9]
            continue
        queue.pop(0)

    # final re-localisation plus a single correction leg toward the goal
    believed = fix()
    believed, outcome = waypoint_follow(robot, believed, goal)
    if outcome.near_wall:
        state["collisions"] += 1
        note("collision")
    state["reached"] = True
    note("goal_correction", believed)
    return state


def run_mission(arena: ArenaMap, start_truth: Pose, config: MissionConfig,
                trace_path=None) -> MissionReport:
    """Build the hidden world, drive the mission, report against the truth."""
    if config.goal is None:
        raise ControllerError("mission config has no goal")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    world = WorldState(truth_pose=start_truth, arena=arena)
    robot = SimulatedRobot(world, config.sensor, config.noise, config.safety,
                           config.scan_resolution, np.random.default_rng(seeds[0]))
    failure = None
    state = {"collisions": 0, "replans": 0, "loc_iterations": 0, "events": []}
    try:
        state = drive_mission(robot, arena, config, np.random.default_rng(seeds[1]))
    except _Abort as abort:
        failure = abort.reason
        state = getattr(abort, "partial", state)
    tx, ty = world.truth_pose.position
    report = MissionReport(
        reached=failure is None,
        final_error=math.hypot(tx - config.goal[0], ty - config.goal[1]),
        path_length_executed=world.odometer,
        collisions_detected=state["collisions"],
        replans=state["replans"],
        localization_iterations=state["loc_iterations"],
        sim_steps=robot.sim_steps,
    )
    if trace_path is not None:
        _write_trace(trace_path, world, state["events"])
    if failure is not None:
        raise MissionFailed(failure, report)
    return report


def _write_trace(path, world: WorldState, events: list) -> None:
    rows = []
    for step, kind, commanded, realized, x, y, theta in world.trace:
        rows.append((step, 0, kind, f"{commanded:.6f}", f"{realized:.6f}",
                     f"{x:.6f}", f"{y:.6f}", f"{theta:.6f}", "", "", "", ""))
    for step, kind, ex, ey, eth in events:
        rows.append((step, 1, "", "", "", "", "", "", kind, ex, ey, eth))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "kind", "commanded", "realized",
                         "truth_x", "truth_y", "truth_theta",
                         "event", "est_x", "est_y", "est_theta"])
        for row in rows:
            writer.writerow([row[0]] + list(row[2:]))


def sample_start_pose(arena: ArenaMap, rng: np.random.Generator,
                      min_clearance: float) -> Pose:
    """Random free pose with wall clearance, mirroring an arbitrary placement."""
    x0, y0, x1, y1 = arena.bbox
    for _ in range(10000):
        p = np.array([[rng.uniform(x0, x1), rng.uniform(y0, y1)]])
        if not points_in_free_space(p, arena)[0]:
            continue
        if _point_segment_distances(p, arena.edges).min() < min_clearance:
            continue
        return Pose(Point2(float(p[0, 0]), float(p[0, 1])),
                    float(rng.uniform(0.0, 2.0 * math.pi)))
    raise ControllerError("could not sample a start pose with enough clearance")


def run_batch(maps, config: MissionConfig, seeds, out_dir=None,
              start: Pose | None = None) -> dict:
    """Run every (map, seed) mission and aggregate per-map statistics.

    maps: iterable of (name, ArenaMap). Deterministic for a fixed seed list;
    per-run trace CSVs and a summary JSON are written when out_dir is given.
    """
    seeds = list(seeds)
    if not seeds:
        raise ControllerError("need at least one seed")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    summary = {"seeds": seeds, "maps": {}}
    for map_index, (name, arena) in enumerate(maps):
        goal = config.goal if config.goal is not None else DEFAULT_GOALS.get(name)
        if goal is None:
            raise ControllerError(f"no goal configured for map {name!r}")
        runs = []
        for seed in seeds:
            run_cfg = replace(config, goal=goal, seed=seed)
            if start is not None:
                start_pose = start
            else:
                start_rng = np.random.default_rng(
                    np.random.SeedSequence([seed, map_index, 0x5EED]))
                start_pose = sample_start_pose(arena, start_rng,
                                               config.robot_radius + 2.0)
            trace_path = (os.path.join(out_dir, f"run_{name}_seed{seed}.csv")
                          if out_dir is not None else None)
            try:
                report = run_mission(arena, start_pose, run_cfg, trace_path)
            except MissionFailed as failed:
                report = failed.report
            entry = {"seed": seed,
                     "start": [round(start_pose.position.x, 6),
                               round(start_pose.position.y, 6),
                               round(start_pose.heading, 6)]}
            entry.update(report.to_json())
            runs.append(entry)
        errors = [r["final_error"] for r in runs]
        collisions = sum(r["collisions_detected"] for r in runs)
        summary["maps"][name] = {
            "goal": [goal[0], goal[1]],
            "runs": runs,
            "mean_final_error": round(float(np.mean(errors)), 9),
            "median_final_error": round(float(np.median(errors)), 9),
            "max_final_error": round(float(np.max(errors)), 9),
            "mean_path_length": round(float(np.mean(
                [r["path_length_executed"] for r in runs])), 9),
            "total_collisions": collisions,
            "collisions_flagged": collisions > 0,
            "success_rate": round(sum(r["reached"] for r in runs) / len(runs), 9),
        }
    if out_dir is not None:
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary
