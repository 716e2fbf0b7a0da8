"""2.5D mine world: wall/free grid with per-cell floor and ceiling heights.

Worlds are generated from a corridor spec: a list of polylines with a
width, optional per-vertex floor elevation and a ceiling height. Cells
inside any corridor are free, everything else is rock.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import ndimage

from ..geometry import Pose2


class WorldSpecError(ValueError):
    """The corridor description cannot be turned into a closed world."""


class WorldFileError(ValueError):
    """A world JSON file is malformed."""


@dataclass(frozen=True)
class Corridor:
    name: str
    points: np.ndarray          # (K, 3): x, y, floor z at each vertex
    width: float
    height: float

    @property
    def segments(self):
        for a, b in zip(self.points[:-1], self.points[1:]):
            yield a, b


@dataclass(frozen=True)
class WorldSpec:
    corridors: tuple[Corridor, ...]
    size: tuple[float, float] = (60.0, 30.0)
    resolution: float = 0.1
    origin: tuple[float, float] = (0.0, 0.0)
    intersections: tuple[tuple[float, float], ...] = ()
    poses: Mapping[str, Pose2] = field(default_factory=dict)
    name: str = "world"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WorldSpec":
        try:
            res = float(d.get("resolution", 0.1))
            size = tuple(float(v) for v in d.get("size", (60.0, 30.0)))
            origin = tuple(float(v) for v in d.get("origin", (0.0, 0.0)))
            default_h = float(d.get("corridor_height", 2.8))
            corridors = []
            for k, c in enumerate(d["corridors"]):
                pts = np.array([list(p) + [0.0] * (3 - len(p)) for p in c["points"]], dtype=np.float64)
                if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
                    raise WorldSpecError(f"corridors[{k}].points needs >= 2 points of [x, y] or [x, y, z]")
                width = float(c["width"])
                if width <= 0:
                    raise WorldSpecError(f"corridors[{k}].width must be positive")
                height = float(c.get("height", default_h))
                if height <= 0:
                    raise WorldSpecError(f"corridors[{k}].height must be positive")
                corridors.append(Corridor(str(c.get("name", f"C{k}")), pts, width, height))
            inters = tuple(tuple(float(v) for v in (i["at"] if isinstance(i, Mapping) else i))
                           for i in d.get("intersections", ()))
            poses = {str(k): Pose2(*v) for k, v in d.get("poses", {}).items()}
        except WorldSpecError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise WorldSpecError(f"invalid world spec: {exc!r}") from None
        if not corridors:
            raise WorldSpecError("spec has no corridors")
        if res <= 0:
            raise WorldSpecError("resolution must be positive")
        return cls(tuple(corridors), size, res, origin, inters, poses, str(d.get("name", "world")))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "resolution": self.resolution,
            "size": list(self.size),
            "origin": list(self.origin),
            "corridors": [
                {"name": c.name, "points": c.points.tolist(), "width": c.width, "height": c.height}
                for c in self.corridors
            ],
            "intersections": [{"at": list(p)} for p in self.intersections],
            "poses": {k: [p.x, p.y, p.yaw] for k, p in self.poses.items()},
        }


@dataclass(frozen=True, eq=False)
class WorldMap:
    """Grid rows index y, columns index x; cell (i, j) covers
    [ox + j*res, ox + (j+1)*res) x [oy + i*res, oy + (i+1)*res)."""

    resolution: float
    occupancy: np.ndarray        # uint8, 1 = wall
    floor_z: np.ndarray
    ceiling_z: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    poses: Mapping[str, Pose2] = field(default_factory=dict)

    def __post_init__(self) -> None:
        occ = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        fz = np.ascontiguousarray(self.floor_z, dtype=np.float64)
        cz = np.ascontiguousarray(self.ceiling_z, dtype=np.float64)
        if occ.ndim != 2 or fz.shape != occ.shape or cz.shape != occ.shape:
            raise ValueError("occupancy, floor_z and ceiling_z must share one 2D shape")
        free = occ == 0
        if np.any(cz[free] <= fz[free]):
            raise ValueError("ceiling must be above floor on every free cell")
        if occ.size and (np.any(free[0]) or np.any(free[-1]) or np.any(free[:, 0]) or np.any(free[:, -1])):
            raise ValueError("world is not closed: free cell on the boundary")
        for a in (occ, fz, cz):
            a.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "floor_z", fz)
        object.__setattr__(self, "ceiling_z", cz)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "poses", dict(self.poses))

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (int(math.floor((y - self.origin[1]) / self.resolution)),
                int(math.floor((x - self.origin[0]) / self.resolution)))

    def in_bounds(self, i: int, j: int) -> bool:
        return 0 <= i < self.height and 0 <= j < self.width

    def is_free(self, x: float, y: float) -> bool:
        i, j = self.cell_of(x, y)
        return self.in_bounds(i, j) and self.occupancy[i, j] == 0

    def floor_at(self, x: float, y: float) -> float:
        i, j = self.cell_of(x, y)
        return float(self.floor_z[i, j])

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        ox, oy = self.origin
        xs = ox + (np.arange(self.width) + 0.5) * self.resolution
        ys = oy + (np.arange(self.height) + 0.5) * self.resolution
        return xs, ys

    @cached_property
    def wall_distance(self) -> np.ndarray:
        """Per cell: distance (m) from the cell centre to the nearest wall face, approximately."""
        free = self.occupancy == 0
        d = ndimage.distance_transform_edt(free) * self.resolution - 0.5 * self.resolution
        d[~free] = 0.0
        d.setflags(write=False)
        return d

    def clearance_at(self, x: float, y: float) -> float:
        i, j = self.cell_of(x, y)
        if not self.in_bounds(i, j):
            return 0.0
        return float(self.wall_distance[i, j])

    def free_components(self) -> int:
        _, n = ndimage.label(self.occupancy == 0)
        return int(n)

    # persistence ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "minenav-world",
            "version": 1,
            "resolution": self.resolution,
            "width": self.width,
            "height": self.height,
            "origin": list(self.origin),
            "occupancy": self.occupancy.reshape(-1).tolist(),
            "floor_z": np.round(self.floor_z, 6).reshape(-1).tolist(),
            "ceiling_z": np.round(self.ceiling_z, 6).reshape(-1).tolist(),
            "poses": {k: [p.x, p.y, p.yaw] for k, p in self.poses.items()},
        }

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), separators=(",", ":")))
        os.replace(tmp, path)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "WorldMap":
        def need(key):
            if key not in d:
                raise WorldFileError(f"missing field {key!r}")
            return d[key]

        try:
            res = float(need("resolution"))
            w, h = int(need("width")), int(need("height"))
        except (TypeError, ValueError) as exc:
            raise WorldFileError(f"bad header field: {exc}") from None
        arrays = {}
        for key in ("occupancy", "floor_z", "ceiling_z"):
            vals = need(key)
            if not isinstance(vals, list) or len(vals) != w * h:
                raise WorldFileError(f"field {key!r} must be a list of width*height = {w * h} numbers")
            try:
                arrays[key] = np.asarray(vals, dtype=np.float64).reshape(h, w)
            except (TypeError, ValueError):
                raise WorldFileError(f"field {key!r} contains non-numeric entries") from None
        occ = arrays["occupancy"]
        if not np.all((occ == 0) | (occ == 1)):
            raise WorldFileError("field 'occupancy' must contain only 0 and 1")
        poses = {}
        for name, v in d.get("poses", {}).items():
            if not (isinstance(v, list) and len(v) == 3):
                raise WorldFileError(f"poses.{name} must be [x, y, yaw]")
            poses[name] = Pose2(*v)
        try:
            return cls(res, occ.astype(np.uint8), arrays["floor_z"], arrays["ceiling_z"],
                       tuple(d.get("origin", (0.0, 0.0))), poses)
        except ValueError as exc:
            raise WorldFileError(str(exc)) from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "WorldMap":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise WorldFileError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(d, dict):
            raise WorldFileError(f"{path}: top level must be an object")
        return cls.from_dict(d)


def _segment_geometry(xs, ys, a, b):
    """Along-track parameter (m) and lateral offset (m) of points from segment a->b."""
    d = b[:2] - a[:2]
    length = float(np.hypot(*d))
    u = d / length
    rx = xs - a[0]
    ry = ys - a[1]
    along = rx * u[0] + ry * u[1]
    lateral = -rx * u[1] + ry * u[0]
    return along, lateral, length


def generate_world(spec: WorldSpec | Mapping[str, Any], seed: int = 0) -> WorldMap:
    """Carve corridors into solid rock.

    ``seed`` is accepted for interface symmetry; generation is fully
    determined by the spec.
    """
    if not isinstance(spec, WorldSpec):
        spec = WorldSpec.from_dict(spec)
    res = spec.resolution
    W = int(round(spec.size[0] / res))
    H = int(round(spec.size[1] / res))
    ox, oy = spec.origin
    xs = ox + (np.arange(W) + 0.5) * res
    ys = oy + (np.arange(H) + 0.5) * res
    X, Y = np.meshgrid(xs, ys)
    lo_x, lo_y = ox + res, oy + res
    hi_x, hi_y = ox + (W - 1) * res, oy + (H - 1) * res

    free = np.zeros((H, W), dtype=bool)
    best = np.full((H, W), np.inf)
    floor = np.zeros((H, W))
    ceil_h = np.zeros((H, W))
    eps = 1e-9
    for cor in spec.corridors:
        pts = cor.points
        nseg = len(pts) - 1
        half = cor.width / 2
        for k, (a, b) in enumerate(cor.segments):
            along, lateral, length = _segment_geometry(X, Y, a, b)
            if length <= 0:
                raise WorldSpecError(f"corridor {cor.name} has a zero-length segment")
            ext0 = half if k > 0 else 0.0
            ext1 = half if k < nseg - 1 else 0.0
            # rectangle corners must stay inside the wall margin
            d = (b[:2] - a[:2]) / length
            n = np.array([-d[1], d[0]])
            corners = [a[:2] - ext0 * d + s * half * n for s in (-1, 1)]
            corners += [b[:2] + ext1 * d + s * half * n for s in (-1, 1)]
            for c in corners:
                if not (lo_x - eps <= c[0] <= hi_x + eps and lo_y - eps <= c[1] <= hi_y + eps):
                    raise WorldSpecError(f"corridor {cor.name} exits the grid near ({c[0]:.2f}, {c[1]:.2f})")
            inside = (along >= -ext0 - eps) & (along <= length + ext1 + eps) & (np.abs(lateral) <= half + eps)
            free |= inside
            # distance to the centreline segment decides which corridor owns a cell's floor
            t = np.clip(along, 0.0, length)
            dist = np.hypot(along - t, lateral)
            z = a[2] + (b[2] - a[2]) * (t / length)
            take = inside & (dist < best - 1e-12)
            best[take] = dist[take]
            floor[take] = z[take]
            ceil_h[take] = cor.height
    ceiling = floor + np.where(free, ceil_h, 1.0)
    occ = (~free).astype(np.uint8)
    for name, p in spec.poses.items():
        i = int(math.floor((p.y - oy) / res))
        j = int(math.floor((p.x - ox) / res))
        if not (0 <= i < H and 0 <= j < W) or occ[i, j]:
            raise WorldSpecError(f"pose {name} is not in free space")
    for k, (px, py) in enumerate(spec.intersections):
        i = int(math.floor((py - oy) / res))
        j = int(math.floor((px - ox) / res))
        if not (0 <= i < H and 0 <= j < W) or occ[i, j]:
            raise WorldSpecError(f"intersection {k} at ({px}, {py}) is not in free space")
    return WorldMap(res, occ, floor, ceiling, spec.origin, spec.poses)


def load_world_spec(path: str | os.PathLike) -> WorldSpec:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise WorldSpecError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise WorldSpecError(f"{path}: top level must be an object")
    return WorldSpec.from_dict(d)
