"""Visibility graph over inflated obstacle polygons, Dijkstra queries and
JSON persistence."""
from __future__ import annotations

import heapq
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import shapely
from scipy import ndimage
from shapely.geometry import Point
from shapely.ops import nearest_points

from .. import kernels
from ..geometry import PointCloud
from ..terrain import OBSTACLE
from .polygon import QUAD_SEGS, ObstaclePolygon, inflate_all, polygon_parts
from .raster import cells_of_points, extract_contours, image_from_cells

FORMAT = "minenav-visgraph"
KIND_VERTEX = "convex-vertex"
KIND_START = "start"
KIND_GOAL = "goal"
_KINDS = (KIND_VERTEX, KIND_START, KIND_GOAL)
_CHUNK = 4096


class PlannerError(RuntimeError):
    pass


class InCollisionError(PlannerError):
    pass


class UnreachableError(PlannerError):
    pass


class GraphFileError(ValueError):
    pass


@dataclass(frozen=True)
class PlannerParams:
    robot_radius: float = 1.0
    resolution: float = 0.05
    sensor_range: float = 30.0
    replan_rate: float = 2.5
    simplify_tolerance: float | None = None   # None -> 2 * resolution
    merge_tolerance: float = 0.1              # re-observed cells closer than this are not new
    convex_eps: float = 1e-9

    def __post_init__(self) -> None:
        if self.robot_radius <= 0:
            raise ValueError("robot_radius must be positive")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def dp_tolerance(self) -> float:
        return 2 * self.resolution if self.simplify_tolerance is None else self.simplify_tolerance

    @property
    def inflation_radius(self) -> float:
        """Offset applied to simplified contours.

        Simplification may cut up to its tolerance into the raw cells and
        buffer chords sit inside the true arc, so both are added back; the
        path then keeps at least robot_radius - resolution from every raw
        obstacle cell.
        """
        sagitta = self.robot_radius * (1.0 - math.cos(math.pi / (4 * QUAD_SEGS)))
        return self.robot_radius + max(0.0, self.dp_tolerance - self.resolution) + sagitta

    def to_dict(self) -> dict:
        return {"robot_radius": self.robot_radius, "resolution": self.resolution,
                "sensor_range": self.sensor_range, "replan_rate": self.replan_rate,
                "simplify_tolerance": self.simplify_tolerance, "merge_tolerance": self.merge_tolerance}


@dataclass(frozen=True, eq=False)
class Path2:
    points: np.ndarray        # (K, 2)
    cost: float
    node_ids: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class VisibilityGraph:
    nodes: np.ndarray                         # (N, 2)
    kinds: tuple[str, ...]
    edges: np.ndarray                         # (K, 2) int, i < j, sorted
    costs: np.ndarray                         # (K,)
    polygons: tuple[ObstaclePolygon, ...] = ()          # inflated
    sources: tuple[ObstaclePolygon, ...] = ()           # raw contours
    cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    params: PlannerParams = PlannerParams()

    def __post_init__(self) -> None:
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64).reshape(-1, 2)
        edges = np.ascontiguousarray(self.edges, dtype=np.int64).reshape(-1, 2)
        costs = np.ascontiguousarray(self.costs, dtype=np.float64).reshape(-1)
        cells = np.ascontiguousarray(self.cells, dtype=np.int64).reshape(-1, 2)
        for a in (nodes, edges, costs, cells):
            a.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "polygons", tuple(self.polygons))
        object.__setattr__(self, "sources", tuple(self.sources))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _obstacle_edges(self):
        return obstacle_edges(self.polygons)

    @cached_property
    def adjacency(self) -> list[list[tuple[int, float]]]:
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
        for (i, j), c in zip(self.edges.tolist(), self.costs.tolist()):
            adj[i].append((j, c))
            adj[j].append((i, c))
        for row in adj:
            row.sort()
        return adj

    def visible(self, segs: np.ndarray) -> np.ndarray:
        segs = np.ascontiguousarray(segs, dtype=np.float64).reshape(-1, 4)
        e, ep, n = self._obstacle_edges
        return kernels.segments_visible(segs, e, ep, n).astype(bool)

    def in_collision(self, pts: np.ndarray) -> np.ndarray:
        pts = np.ascontiguousarray(pts, dtype=np.float64).reshape(-1, 2)
        e, ep, n = self._obstacle_edges
        return kernels.points_inside(pts, e, ep, n).astype(bool)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def same_as(self, other: "VisibilityGraph", tol: float = 1e-6) -> bool:
        """Node positions within ``tol`` and identical edge sets."""
        return (self.n_nodes == other.n_nodes and self.kinds == other.kinds
                and (self.n_nodes == 0 or float(np.max(np.abs(self.nodes - other.nodes))) <= tol)
                and self.edge_set() == other.edge_set())


def obstacle_edges(polygons: Sequence[ObstaclePolygon]):
    """Edge array (E, 4) over every ring and the owning polygon id."""
    segs, owner = [], []
    for k, poly in enumerate(polygons):
        for ring in poly.rings():
            nxt = np.roll(ring, -1, axis=0)
            segs.append(np.hstack([ring, nxt]))
            owner.append(np.full(len(ring), k, dtype=np.int32))
    if not segs:
        return np.zeros((0, 4)), np.zeros(0, dtype=np.int32), 0
    return (np.ascontiguousarray(np.vstack(segs)), np.ascontiguousarray(np.concatenate(owner)),
            len(polygons))


def convex_vertices(polygons: Sequence[ObstaclePolygon], eps: float = 1e-9) -> np.ndarray:
    """Vertices whose interior angle is below 180 degrees.

    Every ring keeps the obstacle on its left (exterior CCW, holes CW), so
    the same left-turn test applies to both.
    """
    out = []
    for poly in polygons:
        for ring in poly.rings():
            prev = np.roll(ring, 1, axis=0)
            nxt = np.roll(ring, -1, axis=0)
            a = ring - prev
            b = nxt - ring
            cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
            scale = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            out.append(ring[cross > eps * np.maximum(scale, 1e-300)])
    if not out:
        return np.zeros((0, 2))
    return np.vstack(out)


def _merge_polygons(polygons: Sequence[ObstaclePolygon]) -> list[ObstaclePolygon]:
    """Union overlapping inputs so no node sits inside another polygon."""
    if len(polygons) < 2:
        return list(polygons)
    shapes = [p.to_shapely() for p in polygons]
    if not any(a.intersects(b) for i, a in enumerate(shapes) for b in shapes[i + 1:]):
        return list(polygons)
    merged = polygon_parts(shapely.union_all(shapes))
    merged.sort(key=lambda g: (round(g.bounds[1], 9), round(g.bounds[0], 9), -g.area))
    return [ObstaclePolygon.from_shapely(g, inflated=True) for g in merged]


def _visible_pairs(nodes: np.ndarray, polygons) -> tuple[np.ndarray, np.ndarray]:
    n = len(nodes)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    e, ep, npoly = obstacle_edges(polygons)
    ii, jj = np.triu_indices(n, k=1)
    keep = np.zeros(len(ii), dtype=bool)
    for s in range(0, len(ii), _CHUNK * 16):
        a, b = ii[s:s + _CHUNK * 16], jj[s:s + _CHUNK * 16]
        segs = np.ascontiguousarray(np.hstack([nodes[a], nodes[b]]))
        keep[s:s + len(a)] = kernels.segments_visible(segs, e, ep, npoly).astype(bool)
    pairs = np.stack([ii[keep], jj[keep]], axis=1).astype(np.int64)
    d = nodes[pairs[:, 1]] - nodes[pairs[:, 0]]
    return pairs, np.hypot(d[:, 0], d[:, 1])


def build_graph(polygons: Sequence[ObstaclePolygon], params: PlannerParams = PlannerParams(),
                sources: Sequence[ObstaclePolygon] = (), cells: np.ndarray | None = None) -> VisibilityGraph:
    """Nodes at convex vertices of the (already inflated) polygons; an edge
    joins two nodes when the open segment avoids every polygon interior."""
    polys = _merge_polygons(polygons)
    nodes = convex_vertices(polys, params.convex_eps)
    if len(nodes):
        # vertices shared by two touching polygons appear once
        _, first = np.unique(np.round(nodes, 12), axis=0, return_index=True)
        nodes = nodes[np.sort(first)]
        inside = kernels.points_inside(np.ascontiguousarray(nodes), *obstacle_edges(polys)).astype(bool)
        nodes = nodes[~inside]
    pairs, costs = _visible_pairs(nodes, polys)
    return VisibilityGraph(nodes, (KIND_VERTEX,) * len(nodes), pairs, costs, polys, sources,
                           np.zeros((0, 2), dtype=np.int64) if cells is None else cells, params)


def build_graph_from_cells(cells: np.ndarray, params: PlannerParams = PlannerParams()) -> VisibilityGraph:
    """Contours, inflation and visibility from a set of occupied raster cells."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    if len(cells):
        cells = np.unique(cells, axis=0)
    image = image_from_cells(cells, params.resolution)
    sources = extract_contours(image, params.dp_tolerance)
    inflated = inflate_all(sources, params.inflation_radius, params.resolution)
    return build_graph(inflated, params, sources, cells)


def obstacle_cells(cloud: PointCloud, resolution: float, origin: Sequence[float] | None = None,
                   max_range: float | None = None) -> np.ndarray:
    pts = cloud.points
    keep = pts[:, 3] == OBSTACLE
    if origin is not None and max_range is not None:
        d = np.hypot(pts[:, 0] - origin[0], pts[:, 1] - origin[1])
        keep &= d <= max_range
    return cells_of_points(pts[keep, :2], resolution)


def build_graph_from_cloud(cloud: PointCloud, params: PlannerParams = PlannerParams()) -> VisibilityGraph:
    """Labelled map-frame cloud to graph."""
    return build_graph_from_cells(obstacle_cells(cloud, params.resolution), params)


def new_evidence(graph: VisibilityGraph, cells: np.ndarray) -> np.ndarray:
    """Cells farther than the merge tolerance from every known cell."""
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    if len(cells) == 0 or len(graph.cells) == 0:
        return cells
    r = int(math.floor(graph.params.merge_tolerance / graph.params.resolution + 1e-9))
    known = graph.cells
    if r <= 0:
        fresh = ~_rows_in(cells, known)
        return cells[fresh]
    # Chebyshev dilation of the known set, restricted to the candidate window
    lo = np.minimum(cells.min(axis=0), known.min(axis=0)) - r
    hi = np.maximum(cells.max(axis=0), known.max(axis=0)) + r
    grid = np.zeros(tuple(hi - lo + 1), dtype=bool)
    grid[known[:, 0] - lo[0], known[:, 1] - lo[1]] = True
    grid = ndimage.binary_dilation(grid, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool))
    return cells[~grid[cells[:, 0] - lo[0], cells[:, 1] - lo[1]]]


def _rows_in(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    av = a.view([("r", a.dtype), ("c", a.dtype)]).reshape(-1)
    bv = np.ascontiguousarray(b).view([("r", b.dtype), ("c", b.dtype)]).reshape(-1)
    return np.isin(av, bv)


def update_graph(graph: VisibilityGraph, cloud: PointCloud, params: PlannerParams | None = None,
                 origin: Sequence[float] | None = None) -> VisibilityGraph:
    """Merge obstacle evidence from a labelled map-frame cloud.

    Only points within sensor range of ``origin`` (when given) count.
    Known obstacles are never removed. When nothing new is seen the same
    graph object is returned; otherwise the graph is rebuilt from the
    enlarged cell set, so the result equals a build from scratch.
    """
    params = params or graph.params
    if graph.polygons and len(graph.cells) == 0:
        raise PlannerError("update_graph needs a graph built from raster cells")
    cand = obstacle_cells(cloud, params.resolution, origin, params.sensor_range if origin is not None else None)
    fresh = new_evidence(graph, cand)
    if len(fresh) == 0:
        return graph
    cells = np.vstack([graph.cells, fresh]) if len(graph.cells) else fresh
    return build_graph_from_cells(cells, params)


# --- queries -----------------------------------------------------------------

def _dijkstra(adj, n: int, src: int, dst: int, extra: dict[int, list[tuple[int, float]]]):
    dist = [math.inf] * n
    pred = [-1] * n
    dist[src] = 0.0
    heap = [(0.0, src)]
    done = [False] * n
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == dst:
            break
        nbrs = adj[u] if u < len(adj) else []
        for v, w in (*nbrs, *extra.get(u, ())):
            if done[v]:
                continue
            nd = d + w
            if nd < dist[v] or (nd == dist[v] and u < pred[v]):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, pred


def plan(graph: VisibilityGraph, start: Sequence[float], goal: Sequence[float]) -> Path2:
    """Shortest polyline from start to goal through the graph.

    Start and goal join the graph as temporary nodes (indices N and N + 1)
    for this query only. Ties between equal-cost routes go to the smaller
    node index.
    """
    s = np.array([float(start[0]), float(start[1])])
    g = np.array([float(goal[0]), float(goal[1])])
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(g))):
        raise PlannerError("start and goal must be finite")
    hit = graph.in_collision(np.stack([s, g]))
    if hit[0]:
        raise InCollisionError(f"start ({s[0]:.3f}, {s[1]:.3f}) is in collision")
    if hit[1]:
        raise InCollisionError(f"goal ({g[0]:.3f}, {g[1]:.3f}) is in collision")
    if np.array_equal(s, g):
        return Path2(s[None, :].copy(), 0.0, ())
    n = graph.n_nodes
    S, G = n, n + 1
    extra: dict[int, list[tuple[int, float]]] = {S: [], G: []}
    segs = []
    if n:
        segs.append(np.hstack([np.repeat(s[None], n, 0), graph.nodes]))
        segs.append(np.hstack([np.repeat(g[None], n, 0), graph.nodes]))
    segs.append(np.hstack([s, g])[None])
    vis = graph.visible(np.vstack(segs))
    d_s = np.hypot(*(graph.nodes - s).T) if n else np.zeros(0)
    d_g = np.hypot(*(graph.nodes - g).T) if n else np.zeros(0)
    for k in np.flatnonzero(vis[:n]).tolist():
        extra[S].append((k, float(d_s[k])))
        extra.setdefault(k, []).append((S, float(d_s[k])))
    for k in np.flatnonzero(vis[n:2 * n]).tolist():
        extra[G].append((k, float(d_g[k])))
        extra.setdefault(k, []).append((G, float(d_g[k])))
    if vis[-1]:
        dsg = float(np.hypot(*(g - s)))
        extra[S].append((G, dsg))
        extra[G].append((S, dsg))
    dist, pred = _dijkstra(graph.adjacency, n + 2, S, G, extra)
    if not math.isfinite(dist[G]):
        raise UnreachableError(f"no route from ({s[0]:.3f}, {s[1]:.3f}) to ({g[0]:.3f}, {g[1]:.3f})")
    ids = [G]
    while ids[-1] != S:
        ids.append(pred[ids[-1]])
    ids.reverse()
    pts = np.array([s if i == S else g if i == G else graph.nodes[i] for i in ids])
    inner = tuple(i for i in ids[1:-1])
    return Path2(pts, float(dist[G]), inner)


def nearest_free_point(graph: VisibilityGraph, p: Sequence[float], nudge: float = 1e-6) -> np.ndarray:
    """``p`` itself when free, else the closest point just outside the
    inflated obstacles."""
    q = np.array([float(p[0]), float(p[1])])
    if not graph.polygons or not graph.in_collision(q)[0]:
        return q
    pt = Point(q)
    best = None
    for poly in graph.polygons:
        shp = poly.to_shapely()
        if shp.contains(pt) or shp.boundary.distance(pt) < 1e-9:
            b = nearest_points(shp.boundary, pt)[0]
            cand = np.array([b.x, b.y])
            d = float(np.hypot(*(cand - q)))
            if best is None or d < best[0]:
                best = (d, cand)
    if best is None:
        return q
    cand = best[1]
    step = cand - q
    norm = float(np.hypot(*step))
    if norm > 0:
        cand = cand + step / norm * nudge
    return cand


# --- persistence ---------------------------------------------------------------

def _poly_to_json(p: ObstaclePolygon) -> str:
    return json.dumps(p.to_dict(), separators=(",", ":"))


def save_graph(graph: VisibilityGraph, path: str | os.PathLike) -> None:
    """JSON, one node / edge / polygon / cell row per line; atomic write."""
    lines = ["{", f' "format": "{FORMAT}",', ' "version": 1,',
             f' "params": {json.dumps(graph.params.to_dict(), sort_keys=True)},']

    def block(name, rows, last=False):
        if not rows:
            lines.append(f' "{name}": []' + ("" if last else ","))
            return
        lines.append(f' "{name}": [')
        for k, r in enumerate(rows):
            lines.append("  " + r + ("," if k < len(rows) - 1 else ""))
        lines.append(" ]" + ("" if last else ","))

    block("nodes", [json.dumps([float(x), float(y), k]) for (x, y), k in zip(graph.nodes.tolist(), graph.kinds)])
    block("edges", [json.dumps([int(i), int(j), float(c)]) for (i, j), c in zip(graph.edges.tolist(),
                                                                               graph.costs.tolist())])
    block("polygons", [_poly_to_json(p) for p in graph.polygons])
    block("sources", [_poly_to_json(p) for p in graph.sources])
    block("cells", [json.dumps([int(r), int(c)]) for r, c in graph.cells.tolist()], last=True)
    lines.append("}")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _need(obj: Any, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise GraphFileError(f"{where}: missing field {key!r}")
    return obj[key]


def _number(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise GraphFileError(f"{where}: expected a finite number, got {v!r}")
    return float(v)


def _polygon_from_json(d: Any, where: str) -> ObstaclePolygon:
    verts = _need(d, "vertices", where)
    if not isinstance(verts, list) or len(verts) < 3:
        raise GraphFileError(f"{where}.vertices: need at least 3 points")
    rings = [verts] + list(d.get("holes", []))
    arrs = []
    for r_i, ring in enumerate(rings):
        tag = f"{where}.vertices" if r_i == 0 else f"{where}.holes[{r_i - 1}]"
        if not isinstance(ring, list):
            raise GraphFileError(f"{tag}: expected a list")
        pts = []
        for k, p in enumerate(ring):
            if not isinstance(p, list) or len(p) != 2:
                raise GraphFileError(f"{tag}[{k}]: expected [x, y]")
            pts.append((_number(p[0], f"{tag}[{k}][0]"), _number(p[1], f"{tag}[{k}][1]")))
        arrs.append(np.array(pts))
    return ObstaclePolygon(arrs[0], tuple(arrs[1:]), bool(d.get("inflated", False)))


def load_graph(path: str | os.PathLike) -> VisibilityGraph:
    """Inverse of save_graph; any JSON layout is accepted."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise GraphFileError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    where = str(path)
    if _need(doc, "format", where) != FORMAT:
        raise GraphFileError(f"{where}: format: expected {FORMAT!r}")
    pd = doc.get("params", {})
    if not isinstance(pd, dict):
        raise GraphFileError(f"{where}: params: expected an object")
    try:
        params = PlannerParams(**{k: v for k, v in pd.items() if k in PlannerParams.__dataclass_fields__})
    except (TypeError, ValueError) as exc:
        raise GraphFileError(f"{where}: params: {exc}") from None
    raw_nodes = _need(doc, "nodes", where)
    if not isinstance(raw_nodes, list):
        raise GraphFileError(f"{where}: nodes: expected a list")
    nodes, kinds = [], []
    for k, row in enumerate(raw_nodes):
        tag = f"{where}: nodes[{k}]"
        if not isinstance(row, list) or len(row) not in (2, 3):
            raise GraphFileError(f"{tag}: expected [x, y, kind]")
        nodes.append((_number(row[0], tag + "[0]"), _number(row[1], tag + "[1]")))
        kind = row[2] if len(row) == 3 else KIND_VERTEX
        if kind not in _KINDS:
            raise GraphFileError(f"{tag}[2]: unknown node kind {kind!r}")
        kinds.append(kind)
    raw_edges = _need(doc, "edges", where)
    if not isinstance(raw_edges, list):
        raise GraphFileError(f"{where}: edges: expected a list")
    nodes_a = np.array(nodes, dtype=np.float64).reshape(-1, 2)
    edges, costs, seen = [], [], set()
    for k, row in enumerate(raw_edges):
        tag = f"{where}: edges[{k}]"
        if not isinstance(row, list) or len(row) not in (2, 3):
            raise GraphFileError(f"{tag}: expected [i, j, cost]")
        ij = []
        for m in (0, 1):
            v = row[m]
            if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < len(nodes):
                raise GraphFileError(f"{tag}[{m}]: node index {v!r} out of range 0..{len(nodes) - 1}")
            ij.append(v)
        i, j = min(ij), max(ij)
        if i == j:
            raise GraphFileError(f"{tag}: self loop on node {i}")
        if (i, j) in seen:
            raise GraphFileError(f"{tag}: duplicate edge ({i}, {j})")
        seen.add((i, j))
        length = float(np.hypot(*(nodes_a[j] - nodes_a[i])))
        if len(row) == 3:
            c = _number(row[2], tag + "[2]")
            if abs(c - length) > 1e-6 * max(1.0, length):
                raise GraphFileError(f"{tag}[2]: cost {c} does not match edge length {length:.9g}")
        edges.append((i, j))
        costs.append(length if len(row) == 2 else c)
    order = sorted(range(len(edges)), key=lambda k: edges[k])
    edges = [edges[k] for k in order]
    costs = [costs[k] for k in order]
    polys = tuple(_polygon_from_json(p, f"{where}: polygons[{k}]") for k, p in enumerate(doc.get("polygons", [])))
    srcs = tuple(_polygon_from_json(p, f"{where}: sources[{k}]") for k, p in enumerate(doc.get("sources", [])))
    cells = doc.get("cells", [])
    for k, c in enumerate(cells):
        if not (isinstance(c, list) and len(c) == 2 and all(isinstance(v, int) and not isinstance(v, bool)
                                                            for v in c)):
            raise GraphFileError(f"{where}: cells[{k}]: expected [row, col] integers")
    return VisibilityGraph(nodes_a, kinds, np.array(edges, dtype=np.int64).reshape(-1, 2),
                           np.array(costs, dtype=np.float64), polys, srcs,
                           np.array(cells, dtype=np.int64).reshape(-1, 2), params)
