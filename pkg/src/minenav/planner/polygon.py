"""Obstacle polygons and clearance inflation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.geometry.polygon import orient

# chords per quarter circle; a 180 degree corner gets at most 8
QUAD_SEGS = 4


def polygon_parts(geom) -> list[Polygon]:
    """Flatten any shapely geometry into its non-empty polygons."""
    if geom is None or geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom] if geom.area > 0 else []
    out: list[Polygon] = []
    for g in getattr(geom, "geoms", ()):
        out.extend(polygon_parts(g))
    return out


@dataclass(frozen=True, eq=False)
class ObstaclePolygon:
    """Simple polygon, exterior counter-clockwise, holes clockwise.

    Vertex arrays are open (the closing vertex is not repeated).
    """

    vertices: np.ndarray
    holes: tuple[np.ndarray, ...] = ()
    inflated: bool = False

    def __post_init__(self) -> None:
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(v) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        v.setflags(write=False)
        hs = []
        for h in self.holes:
            h = np.ascontiguousarray(h, dtype=np.float64).reshape(-1, 2)
            h.setflags(write=False)
            hs.append(h)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "holes", tuple(hs))

    @classmethod
    def from_shapely(cls, poly: Polygon, inflated: bool = False) -> "ObstaclePolygon":
        poly = orient(poly, sign=1.0)
        ext = np.asarray(poly.exterior.coords)[:-1]
        holes = tuple(np.asarray(r.coords)[:-1] for r in poly.interiors)
        return cls(ext, holes, inflated)

    def to_shapely(self) -> Polygon:
        return Polygon(self.vertices, [h for h in self.holes])

    @property
    def area(self) -> float:
        return float(self.to_shapely().area)

    def rings(self) -> list[np.ndarray]:
        return [self.vertices, *self.holes]

    def equals(self, other: "ObstaclePolygon", tol: float = 0.0) -> bool:
        if self.inflated != other.inflated or len(self.holes) != len(other.holes):
            return False
        for a, b in zip(self.rings(), other.rings()):
            if a.shape != b.shape or np.max(np.abs(a - b), initial=0.0) > tol:
                return False
        return True

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "holes": [h.tolist() for h in self.holes],
                "inflated": self.inflated}


def octagon(cx: float, cy: float, radius: float) -> np.ndarray:
    """Regular octagon circumscribing the disc, so it contains the disc."""
    R = radius / math.cos(math.pi / 8)
    ang = (np.arange(8) + 0.5) * (math.pi / 4)
    return np.stack([cx + R * np.cos(ang), cy + R * np.sin(ang)], axis=1)


def inflate_shapely(polygon: ObstaclePolygon, radius: float, resolution: float) -> list[Polygon]:
    if radius < 0:
        raise ValueError("radius must be non-negative")
    shp = polygon.to_shapely()
    if shp.area < resolution * resolution:
        c = shp.centroid if not shp.is_empty else shapely.Point(polygon.vertices.mean(axis=0))
        if radius == 0:
            return [shp] if shp.area > 0 else []
        return [Polygon(octagon(c.x, c.y, radius))]
    if radius == 0:
        return [shp]
    return polygon_parts(shp.buffer(radius, quad_segs=QUAD_SEGS))


def inflate(polygon: ObstaclePolygon, radius: float, resolution: float = 0.05) -> ObstaclePolygon:
    """Outward offset by ``radius`` with rounded corners.

    Polygons smaller than one raster cell become an octagon around the
    centroid.
    """
    parts = inflate_shapely(polygon, radius, resolution)
    if not parts:
        raise ValueError("polygon has no area to inflate")
    if len(parts) > 1:
        parts = polygon_parts(shapely.union_all(parts))
    return ObstaclePolygon.from_shapely(parts[0], inflated=True)


def inflate_all(polygons, radius: float, resolution: float) -> list[ObstaclePolygon]:
    """Inflate every polygon and merge overlapping results."""
    shapes: list[Polygon] = []
    for p in polygons:
        shapes.extend(inflate_shapely(p, radius, resolution))
    if not shapes:
        return []
    merged = polygon_parts(shapely.union_all(shapes))
    merged.sort(key=lambda g: (round(g.bounds[1], 9), round(g.bounds[0], 9), -g.area))
    return [ObstaclePolygon.from_shapely(g, inflated=True) for g in merged]
