"""Points and axis-aligned rectangles.

All containment and intersection tests are closed: a point on a rectangle's
edge is inside it, and two rectangles sharing only an edge intersect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple


class Point(NamedTuple):
    x: float
    y: float


def check_point(x: float, y: float) -> Point:
    x, y = float(x), float(y)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"point coordinates must be finite, got ({x!r}, {y!r})")
    return Point(x, y)


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        vals = (self.xmin, self.ymin, self.xmax, self.ymax)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"rectangle coordinates must be finite, got {vals!r}")
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError(f"inverted rectangle {vals!r}")

    @classmethod
    def from_points(cls, points: Iterable[Point]) -> "Rect":
        xs, ys = [], []
        for p in points:
            xs.append(p[0])
            ys.append(p[1])
        if not xs:
            raise ValueError("cannot bound an empty point set")
        return cls(min(xs), min(ys), max(xs), max(ys))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains_point(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def intersects(self, other: "Rect") -> bool:
        return (self.xmin <= other.xmax and other.xmin <= self.xmax
                and self.ymin <= other.ymax and other.ymin <= self.ymax)

    def union(self, other: "Rect") -> "Rect":
        return Rect(min(self.xmin, other.xmin), min(self.ymin, other.ymin),
                    max(self.xmax, other.xmax), max(self.ymax, other.ymax))
