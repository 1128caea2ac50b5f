"""Planar primitives: points, disks, disk families, rectangular domains.

The merging procedure on disk families is the basic bookkeeping step of the
singularity-detection pipeline: any two disks with intersecting closures are
replaced by the smallest disk containing both, until the family is pairwise
essentially disjoint.  Merging never increases the sum of the radii.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import hypot, isfinite

# Two closed disks are "essentially disjoint" when the center distance is at
# least the radius sum minus this slack (floating-point tangency).
DISJOINT_TOL = 1e-12


@dataclass(frozen=True)
class Point2:
    x1: float
    x2: float

    def __post_init__(self):
        if not (isfinite(self.x1) and isfinite(self.x2)):
            raise ValueError("point coordinates must be finite")

    @staticmethod
    def of(p) -> "Point2":
        if isinstance(p, Point2):
            return p
        return Point2(float(p[0]), float(p[1]))

    def dist(self, other: "Point2") -> float:
        return hypot(self.x1 - other.x1, self.x2 - other.x2)


@dataclass(frozen=True)
class Ball:
    center: Point2
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")

    @staticmethod
    def of(center, radius: float) -> "Ball":
        return Ball(Point2.of(center), float(radius))

    def contains_ball(self, other: "Ball", tol: float = 1e-12) -> bool:
        """Closed-disk containment, with slack for boundary-touching disks."""
        return self.center.dist(other.center) + other.radius <= self.radius + tol

    def contains_point(self, p, tol: float = 0.0) -> bool:
        return self.center.dist(Point2.of(p)) <= self.radius + tol

    def intersects(self, other: "Ball", tol: float = DISJOINT_TOL) -> bool:
        """True when the closures intersect (up to the tangency slack)."""
        return self.center.dist(other.center) < self.radius + other.radius - tol


@dataclass
class BallFamily:
    balls: list[Ball] = field(default_factory=list)

    def __iter__(self):
        return iter(self.balls)

    def __len__(self):
        return len(self.balls)

    def rad(self) -> float:
        """Sum of the radii of the family."""
        return sum(b.radius for b in self.balls)

    def pairwise_disjoint(self, tol: float = DISJOINT_TOL) -> bool:
        bs = self.balls
        for i in range(len(bs)):
            for j in range(i + 1, len(bs)):
                if bs[i].intersects(bs[j], tol):
                    return False
        return True


def enclosing_ball(a: Ball, b: Ball) -> Ball:
    """Smallest disk containing the two disks.

    The center lies on the segment joining the two centers.  When the closures
    of a and b intersect, the radius is at most radius(a) + radius(b), which is
    the bound the merging procedure needs; for distant disks the minimal
    radius is (r_a + r_b + d)/2 and may exceed the sum.
    """
    d = a.center.dist(b.center)
    if d + b.radius <= a.radius:
        return a
    if d + a.radius <= b.radius:
        return b
    r = 0.5 * (a.radius + b.radius + d)
    # center at distance r - a.radius from a's center toward b's center
    t = (r - a.radius) / d
    cx = a.center.x1 + t * (b.center.x1 - a.center.x1)
    cy = a.center.x2 + t * (b.center.x2 - a.center.x2)
    return Ball(Point2(cx, cy), r)


def merge_family(f: BallFamily) -> BallFamily:
    """Merging procedure: replace intersecting pairs by an enclosing disk.

    Pairs are processed deepest-overlap first, which makes the output
    deterministic; the outcome is pairwise essentially disjoint, covers every
    input disk, and has radius sum no larger than the input's.
    """
    balls = list(f.balls)
    while True:
        best = None
        best_depth = DISJOINT_TOL
        for i in range(len(balls)):
            for j in range(i + 1, len(balls)):
                depth = (balls[i].radius + balls[j].radius
                         - balls[i].center.dist(balls[j].center))
                if depth > best_depth:
                    best = (i, j)
                    best_depth = depth
        if best is None:
            return BallFamily(balls)
        i, j = best
        merged = enclosing_ball(balls[i], balls[j])
        balls = [b for k, b in enumerate(balls) if k not in (i, j)]
        balls.append(merged)


@dataclass(frozen=True)
class Rect:
    x1_min: float
    x2_min: float
    x1_max: float
    x2_max: float

    def __post_init__(self):
        if not (self.x1_min < self.x1_max and self.x2_min < self.x2_max):
            raise ValueError("degenerate rectangle")

    def contains_point(self, p, tol: float = 0.0) -> bool:
        p = Point2.of(p)
        return (self.x1_min - tol <= p.x1 <= self.x1_max + tol
                and self.x2_min - tol <= p.x2 <= self.x2_max + tol)

    def contains_ball(self, b: Ball, tol: float = 0.0) -> bool:
        return (b.center.x1 - b.radius >= self.x1_min - tol
                and b.center.x1 + b.radius <= self.x1_max + tol
                and b.center.x2 - b.radius >= self.x2_min - tol
                and b.center.x2 + b.radius <= self.x2_max + tol)

    def contains_rect(self, other: "Rect", strict_margin: float = 0.0) -> bool:
        return (self.x1_min + strict_margin <= other.x1_min
                and other.x1_max <= self.x1_max - strict_margin
                and self.x2_min + strict_margin <= other.x2_min
                and other.x2_max <= self.x2_max - strict_margin)

    def dist_to_boundary(self, p) -> float:
        """Distance from an interior point to the rectangle boundary."""
        p = Point2.of(p)
        return min(p.x1 - self.x1_min, self.x1_max - p.x1,
                   p.x2 - self.x2_min, self.x2_max - p.x2)

    def center(self) -> Point2:
        return Point2(0.5 * (self.x1_min + self.x1_max),
                      0.5 * (self.x2_min + self.x2_max))

    def diam(self) -> float:
        return hypot(self.x1_max - self.x1_min, self.x2_max - self.x2_min)


@dataclass(frozen=True)
class Domain:
    """Reference rectangle with a compactly contained inner rectangle.

    Jump sets of admissible fields must stay in the closure of `inner`.  The
    optional `tilde`/`hat` enlargements support the Dirichlet variant, where
    tilde << omega << hat.
    """
    outer: Rect
    inner: Rect
    tilde: Rect | None = None
    hat: Rect | None = None

    def __post_init__(self):
        if not self.outer.contains_rect(self.inner):
            raise ValueError("inner rectangle must sit strictly inside outer")
        m = self.margin()
        if m <= 0:
            raise ValueError("inner rectangle needs a positive margin")
        if self.tilde is not None and not self.inner.contains_rect(self.tilde):
            raise ValueError("tilde must sit strictly inside inner")
        if self.hat is not None and not self.hat.contains_rect(self.outer):
            raise ValueError("outer must sit strictly inside hat")

    def margin(self) -> float:
        return min(self.inner.x1_min - self.outer.x1_min,
                   self.outer.x1_max - self.inner.x1_max,
                   self.inner.x2_min - self.outer.x2_min,
                   self.outer.x2_max - self.inner.x2_max)

    @staticmethod
    def unit_square(inner_margin: float = 0.15) -> "Domain":
        outer = Rect(0.0, 0.0, 1.0, 1.0)
        m = inner_margin
        return Domain(outer, Rect(m, m, 1.0 - m, 1.0 - m))
