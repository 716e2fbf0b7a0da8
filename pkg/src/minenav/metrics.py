"""Evaluation metrics: geodesic reference distance, SPL, path length,
latency summaries, correction statistics and the per-goal summary table."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from .sim.world import WorldMap


class MetricsError(ValueError):
    pass


class GeodesicError(MetricsError):
    pass


# --- geodesic reference ---------------------------------------------------------

_MOVES = ((0, 1, 1.0), (1, 0, 1.0), (1, 1, math.sqrt(2.0)), (1, -1, math.sqrt(2.0)))


def _grid_graph(allowed: np.ndarray, res: float):
    H, W = allowed.shape
    idx = np.arange(H * W).reshape(H, W)
    rows, cols, vals = [], [], []
    for di, dj, w in _MOVES:
        i0, i1 = max(0, -di), H - max(0, di)
        j0, j1 = max(0, -dj), W - max(0, dj)
        a = allowed[i0:i1, j0:j1]
        b = allowed[i0 + di:i1 + di, j0 + dj:j1 + dj]
        ok = a & b
        if di and dj:
            # no corner cutting: both orthogonal neighbours must be allowed
            ok &= allowed[i0 + di:i1 + di, j0:j1] & allowed[i0:i1, j0 + dj:j1 + dj]
        src = idx[i0:i1, j0:j1][ok]
        dst = idx[i0 + di:i1 + di, j0 + dj:j1 + dj][ok]
        rows.append(src)
        cols.append(dst)
        vals.append(np.full(len(src), w * res))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    return sparse.csr_matrix((v, (r, c)), shape=(H * W, H * W))


def geodesic_path(world: WorldMap, start: Sequence[float], goal: Sequence[float],
                  clearance: float) -> tuple[float, np.ndarray]:
    """Shortest 8-connected grid route between the cells of start and goal
    over cells at least ``clearance`` from any wall. Returns the length and
    the cell-centre polyline."""
    allowed = (world.occupancy == 0) & (world.wall_distance >= clearance)
    cells = []
    for name, p in (("start", start), ("goal", goal)):
        i, j = world.cell_of(float(p[0]), float(p[1]))
        if not world.in_bounds(i, j) or not allowed[i, j]:
            raise GeodesicError(f"{name} ({p[0]:.2f}, {p[1]:.2f}) is not in free space at clearance {clearance} m")
        cells.append((i, j))
    xs, ys = world.cell_centers()
    if cells[0] == cells[1]:
        i, j = cells[0]
        return 0.0, np.array([[xs[j], ys[i]]])
    W = world.width
    s = cells[0][0] * W + cells[0][1]
    g = cells[1][0] * W + cells[1][1]
    graph = _grid_graph(allowed, world.resolution)
    dist, pred = dijkstra(graph, directed=False, indices=s, return_predecessors=True)
    if not math.isfinite(dist[g]):
        raise GeodesicError("goal is unreachable from start")
    chain = [g]
    while chain[-1] != s:
        chain.append(int(pred[chain[-1]]))
    chain.reverse()
    ii, jj = np.divmod(np.array(chain), W)
    return float(dist[g]), np.stack([xs[jj], ys[ii]], axis=1)


def geodesic_distance(world: WorldMap, start: Sequence[float], goal: Sequence[float], clearance: float) -> float:
    return geodesic_path(world, start, goal, clearance)[0]


# --- path metrics -----------------------------------------------------------------

def path_length(trajectory: Sequence[Sequence[float]] | np.ndarray) -> float:
    """Sum of consecutive XY distances. Rows are (x, y, ...) or, when
    there are more than two columns and the first is a time stamp, the
    caller should pass the XY columns."""
    pts = np.asarray(trajectory, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise MetricsError("trajectory needs at least one pose")
    if len(pts) == 1:
        return 0.0
    d = np.diff(pts[:, :2], axis=0)
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def _spl_term(success: bool, shortest: float, taken: float) -> float:
    if shortest <= 0:
        raise MetricsError("geodesic distance must be positive")
    if taken < 0:
        raise MetricsError("path length must be non-negative")
    return (shortest / max(taken, shortest)) if success else 0.0


def spl(records: Iterable) -> float:
    """(1/N) * sum S_i * l_i / max(p_i, l_i).

    Records are TrialRecord objects or (success, geodesic, path_length)
    triples.
    """
    terms = []
    for r in records:
        if isinstance(r, (tuple, list)):
            s, ell, p = r
        else:
            s, ell, p = r.success, r.geodesic, r.path_length
        terms.append(_spl_term(bool(s), float(ell), float(p)))
    if not terms:
        raise MetricsError("spl of an empty record list")
    return math.fsum(terms) / len(terms)


# --- latency -------------------------------------------------------------------------

CRITICAL_STAGES = ("driver", "odometry", "terrain", "planner", "controller")
ASYNC_STAGES = ("localization",)


@dataclass(frozen=True)
class Stats:
    n: int
    median: float
    mean: float
    p95: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "Stats":
        a = np.asarray(values, dtype=np.float64)
        return cls(len(a), float(np.median(a)), float(np.mean(a)), float(np.percentile(a, 95)))

    def to_dict(self) -> dict:
        return {"n": self.n, "median": self.median, "mean": self.mean, "p95": self.p95}


def latency_report(traces: Sequence, localization: Sequence[float] = ()) -> dict:
    """Per-stage and end-to-end statistics (ms) along the critical path.

    ``traces`` are LatencyTrace objects or mappings with ``stages``
    ({name: [entry_ms, exit_ms]}) and ``scan_stamp``/``command_stamp`` in
    ms. Stages missing from a trace are left out of that stage's row.
    Asynchronous localization durations are summarised on their own and
    never enter the end-to-end figure.
    """
    if not traces:
        raise MetricsError("latency_report needs at least one trace")
    per_stage: dict[str, list[float]] = {}
    e2e = []
    for tr in traces:
        stages = tr["stages"] if isinstance(tr, Mapping) else tr.stages
        scan = tr["scan_stamp"] if isinstance(tr, Mapping) else tr.scan_stamp
        cmd = tr["command_stamp"] if isinstance(tr, Mapping) else tr.command_stamp
        for name in CRITICAL_STAGES:
            if name in stages and stages[name] is not None:
                a, b = stages[name]
                per_stage.setdefault(name, []).append(float(b) - float(a))
        e2e.append(float(cmd) - float(scan))
    out = {
        "stages": {k: Stats.of(v).to_dict() for k, v in per_stage.items()},
        "end_to_end": Stats.of(e2e).to_dict(),
    }
    if len(localization):
        out["localization"] = Stats.of(localization).to_dict()
    return out


# --- localization corrections -----------------------------------------------------------

def correction_stats(record_or_series) -> tuple[float, float]:
    """(median per-update XY correction step, max accumulated drift), in m.

    Input: a TrialRecord, or a sequence of correction XY translations in
    update order, the first entry being the initial correction.
    """
    series = getattr(record_or_series, "corrections", record_or_series)
    c = np.asarray(series, dtype=np.float64).reshape(-1, 2)
    if len(c) < 1:
        raise MetricsError("correction_stats needs at least one correction sample")
    if len(c) == 1:
        return 0.0, 0.0
    steps = np.hypot(*np.diff(c, axis=0).T)
    drift = np.hypot(*(c - c[0]).T)
    return float(np.median(steps)), float(np.max(drift))


# --- summary table ---------------------------------------------------------------------

def _mean_std(v: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(v, dtype=np.float64)
    if len(a) == 0:
        return math.nan, math.nan
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


def summary_rows(records: Sequence) -> list[dict]:
    """Per-goal rows (mean and std over repetitions) plus an "All" row
    holding the mean of per-goal means."""
    goals: dict[str, list] = {}
    for r in records:
        goals.setdefault(r.goal_name, []).append(r)
    rows = []
    for name in sorted(goals):
        rs = goals[name]
        ok = [r for r in rs if r.success]
        path_m = _mean_std([r.path_length for r in rs])
        ratio = _mean_std([r.path_length / r.geodesic for r in rs if r.geodesic > 0])
        spls = _mean_std([_spl_term(r.success, r.geodesic, r.path_length) for r in rs])
        time_s = _mean_std([r.elapsed for r in rs])
        rows.append({"goal": name, "success": len(ok), "trials": len(rs),
                     "path_mean": path_m[0], "path_std": path_m[1],
                     "ratio_mean": ratio[0], "ratio_std": ratio[1],
                     "spl_mean": spls[0], "spl_std": spls[1],
                     "time_mean": time_s[0], "time_std": time_s[1]})
    if rows:
        def m(key):
            return float(np.mean([r[key] for r in rows]))
        rows.append({"goal": "All", "success": sum(r["success"] for r in rows),
                     "trials": sum(r["trials"] for r in rows),
                     "path_mean": m("path_mean"), "path_std": math.nan,
                     "ratio_mean": m("ratio_mean"), "ratio_std": math.nan,
                     "spl_mean": m("spl_mean"), "spl_std": float(np.std([r["spl_mean"] for r in rows], ddof=1))
                     if len(rows) > 1 else 0.0,
                     "time_mean": m("time_mean"), "time_std": math.nan})
    return rows


def _pm(mean: float, std: float, digits: int) -> str:
    if math.isnan(std):
        return f"{mean:.{digits}f}"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def summary_csv(records: Sequence) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Goal", "Succ.", "Path (m)", "p/l", "SPL", "Time (s)"])
    for r in summary_rows(records):
        w.writerow([r["goal"], f"{r['success']}/{r['trials']}", _pm(r["path_mean"], r["path_std"], 1),
                    _pm(r["ratio_mean"], r["ratio_std"], 2), _pm(r["spl_mean"], r["spl_std"], 2),
                    _pm(r["time_mean"], r["time_std"], 0)])
    return buf.getvalue()
