"""Planar geometry: convex hulls, polygons, membership tests, projection.

Coordinates are plain (x, y) pairs, by default longitude/latitude in
degrees. An optional local equirectangular projection is available when
metric units are wanted; which frame a model was trained in is recorded
as a coordinate-mode tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHullError
from .validation import as_point, as_points

# Cross products at or below this magnitude (squared coordinate units)
# count as collinear; also the on-boundary tolerance for membership.
COLLINEAR_EPS = 1e-12

EARTH_RADIUS_M = 6_371_000.0


def squared_distance(a, b) -> float:
    """Euclidean squared distance between two planar points."""
    pa = as_point(a, "a")
    pb = as_point(b, "b")
    dx = pa[0] - pb[0]
    dy = pa[1] - pb[1]
    return float(dx * dx + dy * dy)


def _turn(o, a, b) -> float:
    # > 0: o->a->b is a strict left turn
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


class Polygon:
    """Simple closed ring, stored without repeating the end vertex.

    Hull construction emits counter-clockwise rings. Contour extraction
    also produces clockwise rings for interior holes, so orientation is
    observable through :meth:`signed_area` rather than enforced here.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices):
        v = as_points(vertices, name="vertices")
        if v.shape[0] < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {v.shape[0]}")
        if np.any(np.all(v == np.roll(v, -1, axis=0), axis=1)):
            raise ValueError("polygon has equal consecutive vertices")
        v.setflags(write=False)
        self.vertices = v

    def __len__(self) -> int:
        return int(self.vertices.shape[0])

    def __repr__(self) -> str:
        return f"Polygon({len(self)} vertices, area={self.signed_area():.3e})"

    def signed_area(self) -> float:
        """Shoelace area: positive for counter-clockwise rings."""
        x = self.vertices[:, 0]
        y = self.vertices[:, 1]
        return float(0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def bbox(self) -> tuple[float, float, float, float]:
        v = self.vertices
        return (
            float(v[:, 0].min()),
            float(v[:, 1].min()),
            float(v[:, 0].max()),
            float(v[:, 1].max()),
        )

    def contains(self, p) -> bool:
        """Boundary-inclusive membership of a single point."""
        return bool(self.contains_many(as_point(p)[None, :])[0])

    def contains_many(self, points) -> np.ndarray:
        """Boundary-inclusive membership for an (n, 2) array of points.

        Ray casting with the half-open vertex rule; points on an edge or
        vertex count as inside.
        """
        pts = as_points(points, name="points")
        x = pts[:, 0]
        y = pts[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        on_edge = np.zeros(len(pts), dtype=bool)
        v = self.vertices
        nv = len(v)
        for k in range(nv):
            ax, ay = v[k]
            bx, by = v[(k + 1) % nv]
            cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
            dot = (x - ax) * (x - bx) + (y - ay) * (y - by)
            on_edge |= (np.abs(cross) <= COLLINEAR_EPS) & (dot <= COLLINEAR_EPS)
            spans = (ay <= y) != (by <= y)
            dy = np.where(spans, by - ay, 1.0)
            x_hit = ax + (y - ay) * (bx - ax) / dy
            inside ^= spans & (x < x_hit)
        return inside | on_edge


def point_in_polygon(p, polygon: Polygon) -> bool:
    """Boundary-inclusive point-in-polygon test."""
    return polygon.contains(p)


def convex_hull(points) -> Polygon:
    """Strict convex hull by Andrew's monotone chain.

    Returns the minimal convex polygon, counter-clockwise, starting at
    the lexicographically smallest vertex. Points interior to a hull
    edge (collinear within COLLINEAR_EPS) are excluded. Raises
    DegenerateHullError for fewer than 3 distinct points or an
    all-collinear input; the error carries the input point count.
    """
    pts = as_points(points, name="points")
    n_input = pts.shape[0]
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] < 3:
        raise DegenerateHullError(n_input)

    def half(seq):
        chain: list[np.ndarray] = []
        for p in seq:
            while len(chain) >= 2 and _turn(chain[-2], chain[-1], p) <= COLLINEAR_EPS:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(uniq)
    upper = half(uniq[::-1])
    ring = lower[:-1] + upper[:-1]
    if len(ring) < 3:
        raise DegenerateHullError(n_input)
    return Polygon(np.asarray(ring))


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular lon/lat degrees -> local plane meters.

    A small-area approximation centered on (origin_lon, origin_lat);
    adequate at cell scale, not for continental extents.
    """

    origin_lon: float
    origin_lat: float

    def _scale(self) -> tuple[float, float]:
        k = math.pi / 180.0 * EARTH_RADIUS_M
        return k * math.cos(math.radians(self.origin_lat)), k

    def to_plane(self, lonlat) -> np.ndarray:
        pts = as_points(lonlat, name="lonlat")
        kx, ky = self._scale()
        out = np.empty_like(pts)
        out[:, 0] = (pts[:, 0] - self.origin_lon) * kx
        out[:, 1] = (pts[:, 1] - self.origin_lat) * ky
        return out

    def to_lonlat(self, xy) -> np.ndarray:
        pts = as_points(xy, name="xy")
        kx, ky = self._scale()
        out = np.empty_like(pts)
        out[:, 0] = pts[:, 0] / kx + self.origin_lon
        out[:, 1] = pts[:, 1] / ky + self.origin_lat
        return out

    def tag(self) -> str:
        return f"projected:{self.origin_lon!r}:{self.origin_lat!r}"


def projection_from_tag(tag: str) -> LocalProjection | None:
    """Parse a coordinate-mode tag; None means raw degrees."""
    if tag == "degrees":
        return None
    if tag.startswith("projected:"):
        parts = tag.split(":")
        if len(parts) == 3:
            try:
                return LocalProjection(float(parts[1]), float(parts[2]))
            except ValueError:
                pass
    raise ValueError(f"unrecognized coordinate mode tag: {tag!r}")
