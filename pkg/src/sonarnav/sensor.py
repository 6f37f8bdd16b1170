"""Simulated ultrasonic range sensor: ideal sweeps, distortion, scan cleaning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geometry import ArenaMap, Pose, point_in_free_space, ray_cast_batch

TWO_PI = 2.0 * math.pi

# LEGO-style sensor ceiling in cm; readings at max_range mean "no return".
DEFAULT_MAX_RANGE = 255.0

# Cleaning keeps readings within +/-15 degrees of the four cardinal directions.
WINDOW_CENTERS = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)
WINDOW_HALF_WIDTH = math.pi / 12.0


class SensorError(Exception):
    pass


class NegativeTime(SensorError):
    pass


class EmptyScan(SensorError):
    pass


@dataclass(frozen=True)
class SensorModel:
    """Range-noise parameters for the simulated ultrasonic sensor.

    incidence_gain scales the extra error with the angle between the sound
    ray and the wall normal; 0 reproduces a flat Gaussian error.
    """

    sigma: float = 1.0
    max_range: float = DEFAULT_MAX_RANGE
    incidence_gain: float = 0.0
    dropout_prob: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise SensorError("sigma must be >= 0")
        if self.max_range <= 0:
            raise SensorError("max_range must be positive")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise SensorError("dropout_prob must be in [0, 1]")


@dataclass(frozen=True)
class Scan:
    """One 360-degree sweep: uniformly spaced relative angles and ranges (cm)."""

    angles: np.ndarray
    ranges: np.ndarray
    resolution: float

    def __post_init__(self):
        if len(self.angles) != len(self.ranges):
            raise SensorError("angles and ranges must have equal length")

    def __len__(self) -> int:
        return len(self.angles)

    def readings(self):
        return zip(self.angles.tolist(), self.ranges.tolist())


@dataclass(frozen=True)
class CleanScan:
    """Readings kept near the four cardinal directions, tagged by window center."""

    windows: np.ndarray
    angles: np.ndarray
    ranges: np.ndarray

    def __len__(self) -> int:
        return len(self.angles)


def tof_to_distance(t: float, c: float) -> float:
    """Echo time-of-flight to one-way distance: the wave travels out and back."""
    if t < 0:
        raise NegativeTime(f"time of flight must be >= 0, got {t}")
    if c <= 0:
        raise SensorError("propagation speed must be positive")
    return c * t / 2.0


def scan_angles(resolution: float) -> np.ndarray:
    n = int(round(TWO_PI / resolution))
    if n < 1 or abs(n * resolution - TWO_PI) > 1e-9:
        raise SensorError("resolution must evenly divide a full turn")
    return np.arange(n) * resolution


def ideal_scan(pose: Pose, arena: ArenaMap, resolution: float,
               max_range: float = DEFAULT_MAX_RANGE) -> Scan:
    """Noise-free sweep of ray-cast ranges from a pose, capped at max_range."""
    if not point_in_free_space(pose.position, arena):
        from .geometry import OriginOutsideFreeSpace

        raise OriginOutsideFreeSpace(f"scan origin {tuple(pose.position)} is not in free space")
    rel = scan_angles(resolution)
    origins = np.broadcast_to(np.array(pose.position, dtype=float), (len(rel), 2))
    dist, _ = ray_cast_batch(origins, pose.heading + rel, arena)
    return Scan(angles=rel, ranges=np.minimum(dist, max_range), resolution=resolution)


def corrupt_scan(scan: Scan, truth_pose: Pose, arena: ArenaMap, model: SensorModel,
                 rng: np.random.Generator) -> Scan:
    """Apply Gaussian range noise, incidence-angle degradation and dropouts."""
    sigma_eff = np.full(len(scan), model.sigma, dtype=float)
    if model.incidence_gain > 0.0:
        origins = np.broadcast_to(np.array(truth_pose.position, dtype=float), (len(scan), 2))
        world = truth_pose.heading + scan.angles
        _, edge_idx = ray_cast_batch(origins, world, arena)
        dirs = np.stack([np.cos(world), np.sin(world)], axis=1)
        d = arena.edges[edge_idx, 2:4] - arena.edges[edge_idx, 0:2]
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        normals = np.stack([-d[:, 1], d[:, 0]], axis=1)
        cos_phi = np.abs(np.einsum("ij,ij->i", dirs, normals))
        phi = np.minimum(np.arccos(np.clip(cos_phi, 0.0, 1.0)), math.radians(80.0))
        sigma_eff *= 1.0 + model.incidence_gain * np.tan(phi) ** 2
    noisy = scan.ranges + rng.normal(0.0, 1.0, len(scan)) * sigma_eff
    noisy = np.clip(noisy, 0.0, model.max_range)
    if model.dropout_prob > 0.0:
        drop = rng.random(len(scan)) < model.dropout_prob
        noisy = np.where(drop, model.max_range, noisy)
    return Scan(angles=scan.angles.copy(), ranges=noisy, resolution=scan.resolution)


def min_reading_heading(scan: Scan) -> float:
    """Relative angle of the smallest range; ties go to the smallest angle."""
    if len(scan) == 0:
        raise EmptyScan("scan has no readings")
    return float(scan.angles[int(np.argmin(scan.ranges))])


def extract_windows(scan: Scan, half_width: float = WINDOW_HALF_WIDTH) -> CleanScan:
    """Keep readings within +/-half_width of 0/90/180/270 degrees, inclusive."""
    windows = []
    angles = []
    ranges = []
    for center in WINDOW_CENTERS:
        delta = np.abs((scan.angles - center + math.pi) % TWO_PI - math.pi)
        keep = delta <= half_width + 1e-12
        windows.append(np.full(np.count_nonzero(keep), center))
        angles.append(scan.angles[keep])
        ranges.append(scan.ranges[keep])
    return CleanScan(
        windows=np.concatenate(windows),
        angles=np.concatenate(angles),
        ranges=np.concatenate(ranges),
    )


def scan_to_csv(scan: Scan, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["angle_deg", "range_cm"])
        for angle, rng_cm in scan.readings():
            writer.writerow([f"{math.degrees(angle):.6f}", f"{rng_cm:.6f}"])


def scan_from_csv(path) -> Scan:
    angles = []
    ranges = []
    with open(path, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            angles.append(math.radians(float(row["angle_deg"])))
            ranges.append(float(row["range_cm"]))
    if len(angles) < 1:
        raise EmptyScan(f"no readings in {path}")
    resolution = angles[1] - angles[0] if len(angles) > 1 else TWO_PI
    return Scan(angles=np.array(angles), ranges=np.array(ranges), resolution=resolution)
