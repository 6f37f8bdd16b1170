"""Monte-Carlo particle-filter localisation over cleaned ultrasonic scans."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geometry import (ArenaMap, Point2, Pose, nearest_wall_directions,
                       points_in_free_space, ray_cast_batch, wrap_to_pi)
from .plant import MotionCommand, MotionNoise, RobotInterface
from .sensor import CleanScan, extract_windows, min_reading_heading

TWO_PI = 2.0 * math.pi

# Resample jitter halves each generation down to these floors, realizing the
# gradual narrowing of the particle cloud.
JITTER_XY_FLOOR = 0.25
JITTER_THETA_FLOOR = 0.005

# Pure re-scanning cannot break rotational ambiguity; rotate between
# filter iterations to force a fresh alignment.
DISAMBIGUATION_ROTATION = math.radians(30.0)

# A converged estimate whose predicted windows miss the observation by more
# than this fraction of the likelihood sigma is a divergent fix (a rotational
# near-twin of the true pose); the filter restarts instead of returning it.
RESIDUAL_GATE = 0.65


class LocalizationError(Exception):
    pass


class EmptyFreeSpace(LocalizationError):
    pass


class NonpositiveSigma(LocalizationError):
    pass


class AllWeightsZero(LocalizationError):
    """Filter divergence: no particle explains the scan. Restart the filter."""


class DegenerateWeights(LocalizationError):
    pass


class LocalizationFailed(LocalizationError):
    pass


@dataclass(frozen=True)
class FilterConfig:
    particle_count: int = 1000
    sigma: float = 2.0
    jitter_xy: float = 2.0
    jitter_theta: float = 0.05
    convergence_radius: float = 2.0
    max_iterations: int = 10

    def __post_init__(self):
        if self.particle_count < 1:
            raise LocalizationError("particle_count must be >= 1")
        if self.sigma <= 0:
            raise NonpositiveSigma("likelihood sigma must be positive")
        if self.convergence_radius <= 0:
            raise LocalizationError("convergence_radius must be positive")


@dataclass
class ParticleSet:
    """Weighted pose hypotheses: poses is an (N, 3) array of x, y, theta."""

    poses: np.ndarray
    weights: np.ndarray
    generation: int = 0

    def __len__(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    spread_xy: float
    spread_theta: float
    converged: bool


@dataclass(frozen=True)
class LocalizationResult:
    estimate: PoseEstimate
    total_rotation: float
    iterations: int


def init_particles(arena: ArenaMap, config: FilterConfig,
                   rng: np.random.Generator) -> ParticleSet:
    """Uniform particles over free space (rejection sampling), uniform headings."""
    n = config.particle_count
    x0, y0, x1, y1 = arena.bbox
    placed = np.empty((n, 3))
    filled = 0
    attempts = 0
    while filled < n:
        attempts += 1
        if attempts > 1000:
            raise EmptyFreeSpace("could not place particles; free space too small")
        batch = max(n - filled, 64) * 2
        cand = np.column_stack([
            rng.uniform(x0, x1, batch),
            rng.uniform(y0, y1, batch),
        ])
        ok = cand[points_in_free_space(cand, arena)]
        take = min(len(ok), n - filled)
        placed[filled:filled + take, 0:2] = ok[:take]
        filled += take
    placed[:, 2] = rng.uniform(0.0, TWO_PI, n)
    return ParticleSet(poses=placed, weights=np.full(n, 1.0 / n), generation=0)


def likelihood(b: float, r: float, sigma: float) -> float:
    """Gaussian density of a simulated reading b given the observed range r."""
    if sigma <= 0:
        raise NonpositiveSigma("sigma must be positive")
    z = (b - r) / sigma
    return math.exp(-0.5 * z * z) / (sigma * math.sqrt(TWO_PI))


def weigh_particles(particles: ParticleSet, observed: CleanScan, arena: ArenaMap,
                    config: FilterConfig) -> ParticleSet:
    """Multiply weights by the product of per-reading Gaussian likelihoods.

    Log-space accumulation with max subtraction: products of ~124 densities
    underflow doubles otherwise. Particles outside free space get weight 0.
    """
    if len(observed) == 0:
        raise LocalizationError("observed scan is empty")
    n = len(particles)
    k = len(observed)
    free = points_in_free_space(particles.poses[:, 0:2], arena)
    log_w = np.where(particles.weights > 0.0, np.log(particles.weights,
                     where=particles.weights > 0.0, out=np.full(n, -np.inf)), -np.inf)
    idx = np.where(free)[0]
    if len(idx) > 0:
        origins = np.repeat(particles.poses[idx, 0:2], k, axis=0)
        angles = (particles.poses[idx, 2:3] + observed.angles[None, :]).ravel()
        sim, _ = ray_cast_batch(origins, angles, arena)
        resid = sim.reshape(len(idx), k) - observed.ranges[None, :]
        loglik = -0.5 * np.sum((resid / config.sigma) ** 2, axis=1)
        loglik -= k * math.log(config.sigma * math.sqrt(TWO_PI))
        log_w[idx] += loglik
    log_w[~free] = -np.inf
    m = np.max(log_w)
    if not np.isfinite(m):
        raise AllWeightsZero("every particle has zero posterior weight")
    w = np.exp(log_w - m)
    w /= w.sum()
    return ParticleSet(poses=particles.poses.copy(), weights=w,
                       generation=particles.generation)


def _systematic_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="left")


def resample(particles: ParticleSet, config: FilterConfig, rng: np.random.Generator,
             arena: ArenaMap | None = None) -> ParticleSet:
    """Low-variance resampling plus annealed Gaussian jitter around ancestors.

    When the arena is given, offspring that land outside free space are
    re-jittered up to 10 times, then fall back to their parent's pose.
    """
    w = particles.weights
    total = float(w.sum())
    if not np.isfinite(total) or total <= 0.0 or (w < 0.0).any():
        raise DegenerateWeights("weights must be normalized and non-negative")
    n = len(particles)
    parents = particles.poses[_systematic_indices(w / total, rng)]
    jxy = max(config.jitter_xy * 0.5 ** particles.generation, JITTER_XY_FLOOR)
    jth = max(config.jitter_theta * 0.5 ** particles.generation, JITTER_THETA_FLOOR)

    def jittered(base: np.ndarray) -> np.ndarray:
        out = base.copy()
        out[:, 0] += rng.normal(0.0, jxy, len(base))
        out[:, 1] += rng.normal(0.0, jxy, len(base))
        out[:, 2] = (out[:, 2] + rng.normal(0.0, jth, len(base))) % TWO_PI
        return out

    offspring = jittered(parents)
    if arena is not None:
        bad = ~points_in_free_space(offspring[:, 0:2], arena)
        for _ in range(10):
            if not bad.any():
                break
            offspring[bad] = jittered(parents[bad])
            bad = ~points_in_free_space(offspring[:, 0:2], arena)
        offspring[bad] = parents[bad]
    return ParticleSet(poses=offspring, weights=np.full(n, 1.0 / n),
                       generation=particles.generation + 1)


def propagate(particles: ParticleSet, command: MotionCommand, noise: MotionNoise,
              rng: np.random.Generator) -> ParticleSet:
    """Advance every particle by the commanded motion plus per-particle noise."""
    poses = particles.poses.copy()
    n = len(particles)
    if command.kind == "move":
        d = np.full(n, command.amount)
        if noise.move_sigma > 0:
            d = d + rng.normal(0.0, noise.move_sigma, n)
        theta = poses[:, 2]
        if noise.drift_sigma > 0:
            theta = (theta + rng.normal(0.0, noise.drift_sigma, n)) % TWO_PI
        poses[:, 0] += d * np.cos(theta)
        poses[:, 1] += d * np.sin(theta)
        poses[:, 2] = theta
    elif command.kind == "turn":
        dtheta = np.full(n, command.amount)
        if noise.turn_sigma > 0:
            dtheta = dtheta + rng.normal(0.0, noise.turn_sigma, n)
        poses[:, 2] = (poses[:, 2] + dtheta) % TWO_PI
    else:
        raise LocalizationError(f"unknown motion command kind {command.kind!r}")
    return ParticleSet(poses=poses, weights=particles.weights.copy(),
                       generation=particles.generation)


def estimate(particles: ParticleSet, convergence_radius: float = 2.0) -> PoseEstimate:
    """Weighted mean pose with circular heading averaging and RMS spreads."""
    w = particles.weights
    mx = float(np.dot(w, particles.poses[:, 0]))
    my = float(np.dot(w, particles.poses[:, 1]))
    c = float(np.dot(w, np.cos(particles.poses[:, 2])))
    s = float(np.dot(w, np.sin(particles.poses[:, 2])))
    mean_theta = math.atan2(s, c) % TWO_PI
    dx = particles.poses[:, 0] - mx
    dy = particles.poses[:, 1] - my
    spread_xy = math.sqrt(float(np.dot(w, dx * dx + dy * dy)))
    dth = np.angle(np.exp(1j * (particles.poses[:, 2] - mean_theta)))
    spread_theta = math.sqrt(float(np.dot(w, dth * dth)))
    return PoseEstimate(
        pose=Pose(Point2(mx, my), mean_theta),
        spread_xy=spread_xy,
        spread_theta=spread_theta,
        converged=spread_xy <= convergence_radius,
    )


def scan_residual_rms(pose: Pose, observed: CleanScan, arena: ArenaMap) -> float:
    """RMS disagreement between a pose's predicted windows and an observation."""
    k = len(observed)
    origins = np.broadcast_to(np.array(pose.position, dtype=float), (k, 2))
    sim, _ = ray_cast_batch(origins, pose.heading + observed.angles, arena)
    return float(np.sqrt(np.mean((sim - observed.ranges) ** 2)))


def localize(robot: RobotInterface, arena: ArenaMap, config: FilterConfig,
             rng: np.random.Generator,
             motion_noise: MotionNoise | None = None) -> LocalizationResult:
    """Iterate scan / align / clean / weigh / resample until the cloud converges.

    The robot is first turned toward its minimum reading so the sensor faces
    the nearest wall roughly head-on; particles follow every commanded turn.
    """
    noise = motion_noise if motion_noise is not None else MotionNoise(0.0, 0.0, 0.0)
    particles = init_particles(arena, config, rng)
    fresh = True
    best_rms = math.inf
    stalled = 0
    total_rotation = 0.0
    iterations = 0
    while iterations < config.max_iterations:
        iterations += 1
        align = wrap_to_pi(min_reading_heading(robot.ultrascan()))
        robot.turn(align)
        if fresh:
            # The robot now faces its nearest wall. A freshly seeded particle
            # is a live hypothesis only if its heading does the same, so pin
            # each heading to the particle's own nearest-wall direction:
            # uniform headings make the capture probability negligible.
            particles.poses[:, 2] = nearest_wall_directions(particles.poses[:, 0:2], arena)
            fresh = False
        else:
            particles = propagate(particles, MotionCommand.turn(align), noise, rng)
        total_rotation += align
        observed = extract_windows(robot.ultrascan())
        try:
            particles = weigh_particles(particles, observed, arena, config)
        except AllWeightsZero:
            particles = init_particles(arena, config, rng)
            fresh = True
            best_rms = math.inf
            stalled = 0
            continue
        # The 124-reading product posterior is so peaked that the weighted
        # spread collapses after a single update; judge convergence on the
        # resampled cloud, whose annealed jitter narrows generation by
        # generation.
        particles = resample(particles, config, rng, arena)
        est = estimate(particles, config.convergence_radius)
        if est.converged:
            rms = scan_residual_rms(est.pose, observed, arena)
            if rms <= RESIDUAL_GATE * config.sigma:
                return LocalizationResult(estimate=est, total_rotation=total_rotation,
                                          iterations=iterations)
            # Above the gate: a correct fix keeps improving as the jitter
            # anneals (long sightlines amplify small heading errors), while a
            # rotational near-twin plateaus. Restart only when stalled.
            if rms < best_rms - 0.01:
                best_rms = rms
                stalled = 0
            else:
                stalled += 1
                if stalled >= 2:
                    particles = init_particles(arena, config, rng)
                    fresh = True
                    best_rms = math.inf
                    stalled = 0
                    continue
        robot.turn(DISAMBIGUATION_ROTATION)
        particles = propagate(particles, MotionCommand.turn(DISAMBIGUATION_ROTATION),
                              noise, rng)
        total_rotation += DISAMBIGUATION_ROTATION
    raise LocalizationFailed(f"no convergence after {config.max_iterations} iterations")


def particles_to_csv(particles: ParticleSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "theta", "weight"])
        for (x, y, theta), w in zip(particles.poses, particles.weights):
            writer.writerow([f"{x:.6f}", f"{y:.6f}", f"{theta:.6f}", f"{w:.9f}"])
