"""Static SVG renderings of maps, scans, particle clouds and paths."""

from __future__ import annotations

import math

import numpy as np

from .geometry import ArenaMap

LAYERS = ("map", "cspace", "scan", "particles", "planned-path", "executed-path")

_STYLE = {
    "map": 'fill="none" stroke="#c0392b" stroke-width="1.5"',
    "cspace": 'fill="none" stroke="#2980b9" stroke-width="1" stroke-dasharray="4 3"',
    "scan": 'stroke="#e67e22" stroke-width="0.4"',
    "particles": 'fill="#27ae60"',
    "planned-path": 'fill="none" stroke="#8e44ad" stroke-width="1.5"',
    "executed-path": 'fill="none" stroke="#16a085" stroke-width="1"',
}


class RenderError(Exception):
    pass


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def render_svg(arena: ArenaMap, layers, scale: float = 4.0, pad: float = 12.0, *,
               cspace: ArenaMap | None = None,
               scan=None, scan_pose=None,
               particles: np.ndarray | None = None,
               path_waypoints=None,
               executed: np.ndarray | None = None) -> str:
    """Compose the requested layers into a standalone SVG document.

    particles is an (N, >=2) array of positions; executed an (N, 2) array of
    trace positions. Missing inputs for a requested layer raise RenderError.
    """
    layers = list(layers)
    if not layers:
        raise RenderError("need at least one layer")
    for layer in layers:
        if layer not in LAYERS:
            raise RenderError(f"unknown layer {layer!r}; choose from {', '.join(LAYERS)}")
    x0, y0, x1, y1 = arena.bbox
    width = (x1 - x0) * scale + 2 * pad
    height = (y1 - y0) * scale + 2 * pad

    def tx(x: float) -> float:
        return pad + (x - x0) * scale

    def ty(y: float) -> float:
        return pad + (y1 - y) * scale  # SVG y grows downward

    def ring_points(ring: np.ndarray) -> str:
        return " ".join(f"{_fmt(tx(px))},{_fmt(ty(py))}" for px, py in ring)

    groups = []
    for layer in layers:
        style = _STYLE[layer]
        body = []
        if layer == "map":
            body.append(f'<polygon points="{ring_points(arena.boundary)}" {style}/>')
            for obs in arena.obstacles:
                body.append(f'<polygon points="{ring_points(obs)}" {style}/>')
        elif layer == "cspace":
            if cspace is None:
                raise RenderError("cspace layer requested without an inset map")
            body.append(f'<polygon points="{ring_points(cspace.boundary)}" {style}/>')
            for obs in cspace.obstacles:
                body.append(f'<polygon points="{ring_points(obs)}" {style}/>')
        elif layer == "scan":
            if scan is None or scan_pose is None:
                raise RenderError("scan layer requested without scan data and pose")
            ox, oy = scan_pose.position
            for angle, rng_cm in zip(scan.angles, scan.ranges):
                world = scan_pose.heading + angle
                hx = ox + rng_cm * math.cos(world)
                hy = oy + rng_cm * math.sin(world)
                body.append(f'<line x1="{_fmt(tx(ox))}" y1="{_fmt(ty(oy))}" '
                            f'x2="{_fmt(tx(hx))}" y2="{_fmt(ty(hy))}" {style}/>')
        elif layer == "particles":
            if particles is None:
                raise RenderError("particles layer requested without particle data")
            for row in particles:
                body.append(f'<circle cx="{_fmt(tx(row[0]))}" cy="{_fmt(ty(row[1]))}" '
                            f'r="1.2" {style}/>')
        elif layer == "planned-path":
            if path_waypoints is None:
                raise RenderError("planned-path layer requested without a path")
            pts = " ".join(f"{_fmt(tx(p[0]))},{_fmt(ty(p[1]))}" for p in path_waypoints)
            body.append(f'<polyline points="{pts}" {style}/>')
            for p in path_waypoints:
                body.append(f'<circle cx="{_fmt(tx(p[0]))}" cy="{_fmt(ty(p[1]))}" '
                            f'r="2.4" fill="#8e44ad"/>')
        elif layer == "executed-path":
            if executed is None:
                raise RenderError("executed-path layer requested without a trace")
            pts = " ".join(f"{_fmt(tx(p[0]))},{_fmt(ty(p[1]))}" for p in executed)
            body.append(f'<polyline points="{pts}" {style}/>')
        groups.append(f'<g id="{layer}">\n' + "\n".join(body) + "\n</g>")

    return (f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{_fmt(width)}" height="{_fmt(height)}" '
            f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">\n'
            + "\n".join(groups) + "\n</svg>\n")
