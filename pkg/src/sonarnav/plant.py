"""Simulated differential-drive robot: hidden ground truth, noisy actuation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .geometry import ArenaMap, Point2, Pose, point_in_free_space, ray_cast, ray_cast_batch
from .sensor import Scan, SensorModel, corrupt_scan, ideal_scan

# Sub-step length for the move safety check (cm).
MOVE_STEP = 1.0


class PlantError(Exception):
    pass


@dataclass(frozen=True)
class MotionNoise:
    """Actuation error std-devs: per commanded move (cm), per commanded turn
    (rad), plus optional heading drift per move (rad, disabled by default)."""

    move_sigma: float = 0.1
    turn_sigma: float = 0.005
    drift_sigma: float = 0.0

    def __post_init__(self):
        if min(self.move_sigma, self.turn_sigma, self.drift_sigma) < 0:
            raise PlantError("noise std-devs must be >= 0")


@dataclass(frozen=True)
class SafetyConfig:
    stop_threshold: float = 4.0
    backup_distance: float = 5.0

    def __post_init__(self):
        if self.stop_threshold <= 0 or self.backup_distance <= 0:
            raise PlantError("safety distances must be positive")


@dataclass(frozen=True)
class MotionCommand:
    kind: str
    amount: float

    @classmethod
    def move(cls, d: float) -> "MotionCommand":
        if d < 0:
            raise PlantError("move distance must be >= 0")
        return cls("move", float(d))

    @classmethod
    def turn(cls, dtheta: float) -> "MotionCommand":
        return cls("turn", float(dtheta))


@dataclass(frozen=True)
class MoveOutcome:
    moved: float
    near_wall: bool


@dataclass
class WorldState:
    """Hidden simulation truth; only the harness may read truth_pose."""

    truth_pose: Pose
    arena: ArenaMap
    collision_flag: bool = False
    odometer: float = 0.0
    turn_odometer: float = 0.0
    step: int = 0
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if not point_in_free_space(self.truth_pose.position, self.arena):
            raise PlantError(f"truth pose {tuple(self.truth_pose.position)} outside free space")

    def log(self, kind: str, commanded: float, realized: float) -> None:
        self.step += 1
        x, y = self.truth_pose.position
        self.trace.append((self.step, kind, commanded, realized, x, y, self.truth_pose.heading))


def move(world: WorldState, d: float, noise: MotionNoise, safety: SafetyConfig,
         rng: np.random.Generator) -> MoveOutcome:
    """Advance along the heading, stopping before clearance drops below the
    safety threshold; returns the distance actually covered."""
    if d < 0:
        raise PlantError("move distance must be >= 0")
    target = d + (rng.normal(0.0, noise.move_sigma) if noise.move_sigma > 0 else 0.0)
    target = max(target, 0.0)
    heading = world.truth_pose.heading
    if noise.drift_sigma > 0:
        heading = (heading + rng.normal(0.0, noise.drift_sigma)) % (2.0 * math.pi)
    ux, uy = math.cos(heading), math.sin(heading)
    x, y = world.truth_pose.position
    moved = 0.0
    remaining = target
    near_wall = False
    while remaining > 1e-12:
        step = min(MOVE_STEP, remaining)
        clearance = ray_cast((x, y), heading, world.arena)
        if clearance - step < safety.stop_threshold:
            allowed = max(clearance - safety.stop_threshold, 0.0)
            allowed = min(allowed, step)
            x += allowed * ux
            y += allowed * uy
            moved += allowed
            near_wall = True
            break
        x += step * ux
        y += step * uy
        moved += step
        remaining -= step
    world.truth_pose = Pose(Point2(x, y), heading)
    world.odometer += moved
    if near_wall:
        world.collision_flag = True
    world.log("move", d, moved)
    return MoveOutcome(moved=moved, near_wall=near_wall)


def turn(world: WorldState, dtheta: float, noise: MotionNoise,
         rng: np.random.Generator) -> float:
    """Rotate in place about the motion centre; returns the realized angle."""
    realized = dtheta + (rng.normal(0.0, noise.turn_sigma) if noise.turn_sigma > 0 else 0.0)
    world.truth_pose = Pose(world.truth_pose.position, world.truth_pose.heading + realized)
    world.turn_odometer += abs(realized)
    world.log("turn", dtheta, realized)
    return realized


def turnback(world: WorldState, safety: SafetyConfig, rng: np.random.Generator,
             arc_step: float = math.radians(1.0)) -> bool:
    """Back away when anything in the forward half-plane is too close."""
    pose = world.truth_pose
    n = int(round(math.pi / arc_step)) + 1
    angles = pose.heading + np.linspace(-0.5 * math.pi, 0.5 * math.pi, n)
    origins = np.broadcast_to(np.array(pose.position, dtype=float), (n, 2))
    dists, _ = ray_cast_batch(origins, angles, world.arena)
    if float(dists.min()) >= safety.stop_threshold:
        world.log("turnback", 0.0, 0.0)
        return False
    rear = ray_cast(pose.position, pose.heading + math.pi, world.arena)
    backup = min(safety.backup_distance, max(rear - 0.5 * safety.stop_threshold, 0.0))
    x = pose.position.x - backup * math.cos(pose.heading)
    y = pose.position.y - backup * math.sin(pose.heading)
    world.truth_pose = Pose(Point2(x, y), pose.heading)
    world.odometer += backup
    world.collision_flag = True
    world.log("turnback", safety.backup_distance, backup)
    return True


def ultrascan(world: WorldState, model: SensorModel, resolution: float,
              rng: np.random.Generator) -> Scan:
    """Full 360-degree sweep from the hidden truth pose (sensor is homocentric
    with the motion centre, so no offset transform is needed)."""
    clean = ideal_scan(world.truth_pose, world.arena, resolution, model.max_range)
    scan = corrupt_scan(clean, world.truth_pose, world.arena, model, rng)
    world.log("scan", 0.0, 0.0)
    return scan


class RobotInterface(Protocol):
    """What the controller is allowed to see of a robot."""

    def move(self, d: float) -> MoveOutcome: ...

    def turn(self, dtheta: float) -> float: ...

    def ultrascan(self) -> Scan: ...

    def turnback(self) -> bool: ...


class SimulatedRobot:
    """RobotInterface backend over a hidden WorldState."""

    def __init__(self, world: WorldState, model: SensorModel, noise: MotionNoise,
                 safety: SafetyConfig, resolution: float, rng: np.random.Generator):
        self._world = world
        self._model = model
        self._noise = noise
        self._safety = safety
        self._resolution = resolution
        self._rng = rng
        self.sim_steps = 0

    def move(self, d: float) -> MoveOutcome:
        self.sim_steps += 1
        return move(self._world, d, self._noise, self._safety, self._rng)

    def turn(self, dtheta: float) -> float:
        self.sim_steps += 1
        return turn(self._world, dtheta, self._noise, self._rng)

    def ultrascan(self) -> Scan:
        self.sim_steps += 1
        return ultrascan(self._world, self._model, self._resolution, self._rng)

    def turnback(self) -> bool:
        self.sim_steps += 1
        return turnback(self._world, self._safety, self._rng)
