"""Small planar/3D geometry values used by the ontology and the awareness engine.

Coordinates are meters in a right-handed site frame with the origin at one
floor corner: x along the site width, y along the depth, z up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Vec3:
    x: float
    y: float
    z: float

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def planar_distance(self, other: "Vec3") -> float:
        """Distance in the floor plane, ignoring z."""
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Box3:
    """Axis-aligned site volume anchored at the origin: width (x), depth (y), height (z)."""

    w: float
    d: float
    h: float

    def is_positive(self) -> bool:
        return self.w > 0 and self.d > 0 and self.h > 0

    def contains(self, p: Vec3) -> bool:
        return 0 <= p.x <= self.w and 0 <= p.y <= self.d and 0 <= p.z <= self.h


@dataclass(frozen=True)
class Rect2:
    """Floor rectangle: corner (x, y) plus extent (w along x, d along y)."""

    x: float
    y: float
    w: float
    d: float

    def is_positive(self) -> bool:
        return self.w > 0 and self.d > 0

    def contains_point(self, x: float, y: float) -> bool:
        return self.x <= x <= self.x + self.w and self.y <= y <= self.y + self.d

    def within(self, bounds: Box3) -> bool:
        return (
            0 <= self.x
            and 0 <= self.y
            and self.x + self.w <= bounds.w
            and self.y + self.d <= bounds.d
        )

    def distance_to_point(self, x: float, y: float) -> float:
        """Euclidean floor distance from (x, y) to the rectangle (0 inside)."""
        dx = max(self.x - x, 0.0, x - (self.x + self.w))
        dy = max(self.y - y, 0.0, y - (self.y + self.d))
        return math.hypot(dx, dy)
