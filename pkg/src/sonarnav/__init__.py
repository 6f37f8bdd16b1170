"""sonarnav: deterministic 2D ultrasonic robot localisation and navigation."""

from .geometry import ArenaMap, Point2, Pose, bundled_map

__all__ = ["ArenaMap", "Point2", "Pose", "bundled_map"]
__version__ = "0.1.0"
