"""Bird's-eye obstacle raster and cell-edge contour extraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Polygon
from scipy import ndimage

from ..geometry import PointCloud
from ..terrain import OBSTACLE
from .polygon import ObstaclePolygon, polygon_parts


@dataclass(frozen=True, eq=False)
class OccupancyImage:
    """Binary raster. Cell (r, c) covers x in [(c0 + c) * res, ...),
    y in [(r0 + r) * res, ...), so cells from different images align."""

    data: np.ndarray          # bool (rows = y, cols = x)
    resolution: float
    offset: tuple[int, int] = (0, 0)   # (r0, c0) in global cell units

    def cells(self) -> np.ndarray:
        """Occupied cells as global (row, col) pairs, lexicographically sorted."""
        r, c = np.nonzero(self.data)
        return np.stack([r + self.offset[0], c + self.offset[1]], axis=1).astype(np.int64)

    @property
    def count(self) -> int:
        return int(self.data.sum())


def cells_of_points(xy: np.ndarray, resolution: float) -> np.ndarray:
    """Unique global (row, col) cells hit by xy points, sorted."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if len(xy) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    rc = np.floor(xy[:, ::-1] / resolution).astype(np.int64)
    return np.unique(rc, axis=0)


def image_from_cells(cells: np.ndarray, resolution: float, margin: int = 1) -> OccupancyImage:
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    if len(cells) == 0:
        return OccupancyImage(np.zeros((0, 0), dtype=bool), resolution)
    lo = cells.min(axis=0) - margin
    hi = cells.max(axis=0) + margin
    data = np.zeros(tuple(hi - lo + 1), dtype=bool)
    data[cells[:, 0] - lo[0], cells[:, 1] - lo[1]] = True
    return OccupancyImage(data, resolution, (int(lo[0]), int(lo[1])))


def rasterize_obstacles(cloud: PointCloud, resolution: float) -> OccupancyImage:
    """A cell is occupied iff at least one obstacle-labelled point falls in it."""
    if len(cloud) == 0:
        return image_from_cells(np.zeros((0, 2)), resolution)
    pts = cloud.points
    obstacle = pts[:, 3] == OBSTACLE
    return image_from_cells(cells_of_points(pts[obstacle, :2], resolution), resolution)


# --- contours ----------------------------------------------------------------

# unit moves on the corner lattice, indexed so that (d + 1) % 4 is a left turn
_DX = (1, 0, -1, 0)
_DY = (0, 1, 0, -1)


# (row, col) offset of the occupied cell left of an edge leaving a corner
_LEFT_CELL = ((0, 0), (0, -1), (-1, -1), (-1, 0))


def _crack_edges(occ: np.ndarray):
    """Directed boundary edges with the occupied cell on the left.

    Corners are (x, y) = (col, row) lattice points. Returns arrays of start
    x, start y and direction index.
    """
    H, W = occ.shape
    pad = np.zeros((H + 2, W + 2), dtype=bool)
    pad[1:-1, 1:-1] = occ
    core = pad[1:-1, 1:-1]
    out = []
    # bottom edge, heading +x; free below
    r, c = np.nonzero(core & ~pad[:-2, 1:-1])
    out.append((c, r, np.zeros_like(r)))
    # right edge, heading +y; free to the right
    r, c = np.nonzero(core & ~pad[1:-1, 2:])
    out.append((c + 1, r, np.ones_like(r)))
    # top edge, heading -x; free above
    r, c = np.nonzero(core & ~pad[2:, 1:-1])
    out.append((c + 1, r + 1, np.full_like(r, 2)))
    # left edge, heading -y; free to the left
    r, c = np.nonzero(core & ~pad[1:-1, :-2])
    out.append((c, r + 1, np.full_like(r, 3)))
    xs = np.concatenate([o[0] for o in out])
    ys = np.concatenate([o[1] for o in out])
    ds = np.concatenate([o[2] for o in out])
    return xs.astype(np.int64), ys.astype(np.int64), ds.astype(np.int64)


def _trace_rings(occ: np.ndarray) -> list[tuple[np.ndarray, int]]:
    """Closed corner-lattice rings (corners only) with the direction of
    their first edge; occupied side on the left.

    At a saddle corner (two occupied cells touching diagonally) the trace
    turns right, which keeps diagonal neighbours in one component.
    """
    xs, ys, ds = _crack_edges(occ)
    if len(xs) == 0:
        return []
    W1 = occ.shape[1] + 1
    key = ys * W1 + xs
    order = np.lexsort((ds, key))
    xs, ys, ds, key = xs[order], ys[order], ds[order], key[order]
    # out-edges per corner: at most two (saddles)
    out: dict[int, list[int]] = {}
    for idx, k in enumerate(key.tolist()):
        out.setdefault(k, []).append(idx)
    used = np.zeros(len(xs), dtype=bool)
    rings = []
    for start in range(len(xs)):
        if used[start]:
            continue
        ring = []
        e = start
        while not used[e]:
            used[e] = True
            x, y, d = int(xs[e]), int(ys[e]), int(ds[e])
            ring.append((x, y, d))
            nx, ny = x + _DX[d], y + _DY[d]
            cands = [i for i in out[ny * W1 + nx] if not used[i]]
            if not cands:
                break
            if len(cands) == 1:
                e = cands[0]
            else:
                right = (d + 3) % 4
                e = next((i for i in cands if ds[i] == right), cands[0])
        pts = np.array([(x, y) for x, y, _ in ring], dtype=np.float64)
        dirs = np.array([d for _, _, d in ring])
        corner = np.flatnonzero(dirs != np.roll(dirs, 1))
        rings.append((pts[corner], int(dirs[corner[0]])))
    return rings


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def extract_contours(image: OccupancyImage, tolerance: float | None = None):
    """Polygons (exterior CCW, holes CW) of each 8-connected occupied
    component, simplified with Douglas-Peucker at ``tolerance``
    (default 2 * resolution)."""
    occ = np.asarray(image.data, dtype=bool)
    if occ.size == 0 or not occ.any():
        return []
    res = image.resolution
    tol = 2 * res if tolerance is None else tolerance
    labels, n = ndimage.label(occ, structure=np.ones((3, 3), dtype=int))
    rings = _trace_rings(occ)
    exteriors: dict[int, np.ndarray] = {}
    holes: dict[int, list[np.ndarray]] = {}
    for ring, d in rings:
        dr, dc = _LEFT_CELL[d]
        lab = int(labels[int(ring[0, 1]) + dr, int(ring[0, 0]) + dc])
        if _signed_area(ring) > 0:
            exteriors[lab] = ring
        else:
            holes.setdefault(lab, []).append(ring)
    r0, c0 = image.offset
    shift = np.array([c0, r0], dtype=np.float64)
    polys = []
    for lab in sorted(exteriors):
        ext = (exteriors[lab] + shift) * res
        hls = [(h + shift) * res for h in holes.get(lab, [])]
        for poly in _valid_parts(Polygon(ext, hls)):
            if tol > 0 and len(poly.exterior.coords) > 5:
                simp = poly.simplify(tol, preserve_topology=True)
                if isinstance(simp, Polygon) and not simp.is_empty and simp.is_valid:
                    poly = simp
            polys.append(ObstaclePolygon.from_shapely(poly))
    return polys


def _valid_parts(poly: Polygon) -> list[Polygon]:
    # rings through a saddle corner touch themselves; split them there
    if poly.is_valid:
        return [poly]
    parts = polygon_parts(shapely.make_valid(poly))
    return sorted(parts, key=lambda g: (g.bounds[1], g.bounds[0]))
