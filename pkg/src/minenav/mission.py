"""Mission executor on a virtual clock.

Each 100 ms a scan enters the pipeline. Critical path per planning scan
(every 4th scan, 2.5 Hz):

    driver -> odometry -> terrain -> planner -> controller -> command

with fixed virtual stage budgets, so command timestamps depend only on
scan timestamps. Localization runs beside it: a scan that arrives while
the previous alignment is still running is dropped, and a finished
alignment swaps the map->odom correction at its completion time.

Real compute time per stage is measured too and kept apart from the
deterministic record.
"""
from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .controller import ControllerParams, PursuitController, VelocityCommand
from .geometry import PointCloud, Pose2, RigidTransform, project_se2, transform_cloud
from .localization import (
    CorrectionState,
    NdtGrid,
    NdtParams,
    build_ndt_grid,
    ndt_align,
    predict_pose,
    update_correction,
)
from .metrics import CRITICAL_STAGES, GeodesicError, geodesic_path, path_length
from .planner.visgraph import (
    InCollisionError,
    PlannerError,
    PlannerParams,
    UnreachableError,
    VisibilityGraph,
    build_graph_from_cloud,
    nearest_free_point,
    plan,
    update_graph,
)
from .sim.lidar import LidarConfig, cast_scan
from .sim.motion import DriftingOdometry, OdometryModel, RobotLimits, RobotState, step_motion
from .sim.world import WorldMap
from .terrain import CeilingParams, PmfParams, segment_map_cloud, segment_scan

# virtual stage budgets (ms) along the critical path
DEFAULT_BUDGETS = {"driver": 84, "odometry": 8, "terrain": 41, "planner": 29, "controller": 1}


class MissionError(RuntimeError):
    pass


@dataclass(frozen=True)
class MissionConfig:
    start: Pose2                                 # true start pose
    goal: Pose2
    goal_name: str = "goal"
    seed: int = 0
    initial_pose: Pose2 | None = None            # operator estimate; None -> seeded perturbation of start
    initial_offset: float = 0.25                 # m, radius of the seeded perturbation
    initial_yaw_offset: float = math.radians(3.0)
    success_radius: float = 1.0
    timeout_s: float = 300.0
    tick_ms: int = 10
    scan_period_ms: int = 100
    plan_every: int = 4                          # scans per planning cycle
    budgets: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    localization_ms: int = 100
    localization_stalls: Mapping[int, int] = field(default_factory=dict)   # scan index -> extra ms
    use_localization: bool = True
    geodesic_clearance: float = 1.0
    lidar: LidarConfig = LidarConfig()
    odometry: OdometryModel | None = None        # None -> default model seeded with ``seed``
    ndt: NdtParams = NdtParams()
    ceiling: CeilingParams = CeilingParams()
    pmf: PmfParams = PmfParams()
    planner: PlannerParams = PlannerParams()
    controller: ControllerParams = ControllerParams()
    limits: RobotLimits = RobotLimits()

    def __post_init__(self) -> None:
        if self.success_radius <= self.controller.goal_tolerance:
            raise ValueError("success radius must exceed the controller goal tolerance")
        if self.scan_period_ms % self.tick_ms:
            raise ValueError("scan period must be a multiple of the tick")
        missing = set(CRITICAL_STAGES) - set(self.budgets)
        if missing:
            raise ValueError(f"missing stage budgets: {sorted(missing)}")


@dataclass
class LatencyTrace:
    scan_stamp: int                    # ms
    command_stamp: int                 # ms
    stages: dict[str, tuple[int, int]]

    @property
    def end_to_end(self) -> int:
        return self.command_stamp - self.scan_stamp

    def to_dict(self) -> dict:
        return {"scan_stamp": self.scan_stamp, "command_stamp": self.command_stamp,
                "stages": {k: list(v) for k, v in self.stages.items()}}


@dataclass
class TrialRecord:
    goal_name: str
    seed: int
    success: bool
    path_length: float
    geodesic: float
    elapsed: float
    final_distance: float
    contact: bool
    timed_out: bool
    reason: str
    start: list[float]
    goal: list[float]
    corrections: list[list[float]]           # correction XY after each accepted update, first fix first
    correction_stamps: list[int]
    odom_only_error: float                   # final |estimate - truth| holding the first fix all mission
    corrected_error: float                   # final |estimate - truth| with live corrections
    latency: list[dict]                      # LatencyTrace dicts, one per velocity command
    localization: list[dict]                 # async alignments: scan stamp, start, end, converged
    dropped_scans: int
    commands: list[list[float]]              # [stamp ms, v, w, done]
    trajectory: list[list[float]]            # [t s, x, y, yaw] every scan period, true pose
    geodesic_path: list[list[float]] = field(default_factory=list)
    wall_clock: dict[str, list[float]] = field(default_factory=dict)   # real ms per stage, not serialised

    @property
    def path_ratio(self) -> float:
        return self.path_length / self.geodesic if self.geodesic > 0 else math.inf

    @property
    def stage_latencies(self) -> list[tuple[str, int]]:
        out = []
        for tr in self.latency:
            for name, (a, b) in tr["stages"].items():
                out.append((name, b - a))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("wall_clock")
        return d

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrialRecord":
        names = set(cls.__dataclass_fields__) - {"wall_clock"}
        missing = {n for n in names if n not in d and n != "geodesic_path"}
        if missing:
            raise ValueError(f"trial record missing fields: {sorted(missing)}")
        kw = {k: d[k] for k in names if k in d}
        for k in ("path_length", "geodesic", "elapsed", "final_distance", "odom_only_error", "corrected_error"):
            if kw[k] is None:             # non-finite values are stored as null
                kw[k] = math.nan
        return cls(**kw)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass(eq=False)
class MissionResources:
    """Read-only inputs shared by every trial of a run."""

    world: WorldMap
    map_cloud: PointCloud
    grid: NdtGrid
    graph: VisibilityGraph

    @classmethod
    def build(cls, world: WorldMap, map_cloud: PointCloud, graph: VisibilityGraph | None = None,
              ndt: NdtParams = NdtParams(), planner: PlannerParams = PlannerParams(),
              pmf: PmfParams = PmfParams(), clearance_height: float | None = None) -> "MissionResources":
        grid = build_ndt_grid(map_cloud, ndt)
        if graph is None:
            graph = prior_graph(map_cloud, planner, pmf, clearance_height)
        return cls(world, map_cloud, grid, graph)


def prior_graph(map_cloud: PointCloud, planner: PlannerParams = PlannerParams(), pmf: PmfParams = PmfParams(),
                clearance_height: float | None = None) -> VisibilityGraph:
    """Visibility graph of a prior map: ground/obstacle labelling with
    everything above the robot's clearance height dropped, then the
    planner build. Clearance defaults to the body height plus the scan
    ceiling cut."""
    h = clearance_height if clearance_height is not None else RobotLimits().body_height + CeilingParams().z_max
    return build_graph_from_cloud(segment_map_cloud(map_cloud, h, pmf), planner)


def _initial_estimate(cfg: MissionConfig) -> Pose2:
    if cfg.initial_pose is not None:
        return cfg.initial_pose
    rng = np.random.default_rng([cfg.seed, 7])
    r = cfg.initial_offset * math.sqrt(rng.uniform())
    a = rng.uniform(-math.pi, math.pi)
    dyaw = rng.uniform(-cfg.initial_yaw_offset, cfg.initial_yaw_offset)
    s = cfg.start
    return Pose2(s.x + r * math.cos(a), s.y + r * math.sin(a), s.yaw + dyaw)


class _Timer:
    def __init__(self, sink: dict[str, list[float]], name: str):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink.setdefault(self.name, []).append((time.perf_counter() - self.t0) * 1e3)


def run_trial(cfg: MissionConfig, res: MissionResources) -> TrialRecord:
    """Execute one trial. Fully deterministic given ``cfg`` and ``res``."""
    world = res.world
    limits = cfg.limits
    clock: dict[str, list[float]] = {}
    b = cfg.budgets
    t_odom = b["driver"] + b["odometry"]
    t_plan = t_odom + b["terrain"]
    t_ctrl = t_plan + b["planner"]
    t_cmd = t_ctrl + b["controller"]

    goal_xy = (cfg.goal.x, cfg.goal.y)
    try:
        ell, ref_path = geodesic_path(world, (cfg.start.x, cfg.start.y), goal_xy, cfg.geodesic_clearance)
    except GeodesicError as exc:
        ell, ref_path = math.nan, np.zeros((0, 2))
        geodesic_failure = str(exc)
    else:
        geodesic_failure = ""

    s = cfg.start
    z0 = world.floor_at(s.x, s.y) + limits.body_height
    state = RobotState(RigidTransform.from_yaw(s.yaw, s.x, s.y, z0))
    odo = DriftingOdometry(cfg.odometry or OdometryModel(seed=cfg.seed))
    odom_now = odo.update(state.true_pose)
    est0 = _initial_estimate(cfg)
    correction = CorrectionState.from_initial_pose(RigidTransform.from_yaw(est0.yaw, est0.x, est0.y, z0), odom_now)
    first_fix: CorrectionState | None = None
    corrections = [list(correction.map_from_odom.translation[:2])]
    correction_stamps = [0]
    graph = res.graph
    controller = PursuitController(cfg.controller)
    rng = np.random.default_rng([cfg.seed, 11])

    events: list = []
    seq = 0

    def push(at: int, kind: str, payload) -> None:
        nonlocal seq
        heapq.heappush(events, (at, seq, kind, payload))
        seq += 1

    odom_hist: dict[int, RigidTransform] = {0: odom_now}
    active = VelocityCommand(0.0, 0.0)
    pending: list[tuple[int, VelocityCommand]] = []
    ndt_free_at = 0
    scan_idx = 0
    dropped = 0
    latency: list[dict] = []
    loc_log: list[dict] = []
    commands: list[list[float]] = []
    trajectory = [[0.0, s.x, s.y, s.yaw]]
    travelled = 0.0
    contact = False
    reason = ""
    finished_at: int | None = None
    timeout_ms = int(round(cfg.timeout_s * 1000))
    t = 0

    def pose_at(ms: int) -> RigidTransform:
        tick = (ms // cfg.tick_ms) * cfg.tick_ms
        return odom_hist.get(tick, odom_now)

    while t <= timeout_ms and finished_at is None and not reason:
        # 1. deliver pipeline events due by now
        while events and events[0][0] <= t and not reason and finished_at is None:
            at, _, kind, payload = heapq.heappop(events)
            if kind == "ndt":
                result, odom_scan, stamp, started = payload
                loc_log.append({"scan_stamp": stamp, "start": started, "end": at,
                                "converged": bool(result.converged), "fitness": float(result.fitness)})
                if result.converged:
                    correction = update_correction(correction, result.pose, odom_scan, at / 1000.0, result.score)
                    if first_fix is None:
                        # the first fix replaces the operator's estimate; drift is measured from here
                        first_fix = correction
                        corrections.clear()
                        correction_stamps.clear()
                    corrections.append(list(correction.map_from_odom.translation[:2]))
                    correction_stamps.append(at)
            elif kind == "plan":
                scan, odom_scan, stamp = payload
                with _Timer(clock, "terrain"):
                    labelled = segment_scan(scan, cfg.ceiling, cfg.pmf)
                with _Timer(clock, "planner"):
                    est = predict_pose(correction, odom_scan)
                    cloud = transform_cloud(est, labelled, "map")
                    ex, ey = float(est.translation[0]), float(est.translation[1])
                    graph = update_graph(graph, cloud, cfg.planner, origin=(ex, ey))
                    try:
                        start_xy = nearest_free_point(graph, (ex, ey))
                        path = plan(graph, start_xy, goal_xy)
                    except InCollisionError as exc:
                        reason = f"in collision: {exc}"
                        break
                    except UnreachableError as exc:
                        reason = f"unreachable: {exc}"
                        break
                    except PlannerError as exc:
                        reason = f"planner error: {exc}"
                        break
                push(stamp + t_ctrl, "control", (path.points, stamp))
            elif kind == "control":
                pts, stamp = payload
                with _Timer(clock, "controller"):
                    pose = project_se2(predict_pose(correction, pose_at(at)))
                    cmd = controller.step(pose, pts)
                cmd_at = stamp + t_cmd
                pending.append((cmd_at, cmd))
                commands.append([cmd_at, cmd.v, cmd.w, cmd.done])
                latency.append(LatencyTrace(stamp, cmd_at, {
                    "driver": (stamp, stamp + b["driver"]),
                    "odometry": (stamp + b["driver"], stamp + t_odom),
                    "terrain": (stamp + t_odom, stamp + t_plan),
                    "planner": (stamp + t_plan, stamp + t_ctrl),
                    "controller": (stamp + t_ctrl, cmd_at),
                }).to_dict())
                if cmd.done:
                    finished_at = cmd_at
        if reason or finished_at is not None:
            break

        # 2. new scan
        if t % cfg.scan_period_ms == 0:
            with _Timer(clock, "driver"):
                scan = cast_scan(world, state.true_pose, cfg.lidar, t / 1000.0, rng)
            odom_scan = odom_now
            if cfg.use_localization:
                start_at = t + t_odom
                if start_at >= ndt_free_at:
                    with _Timer(clock, "localization"):
                        guess = predict_pose(correction, odom_scan)
                        result = ndt_align(res.grid, scan, guess, cfg.ndt)
                    done_at = start_at + cfg.localization_ms + int(cfg.localization_stalls.get(scan_idx, 0))
                    ndt_free_at = done_at
                    push(done_at, "ndt", (result, odom_scan, t, start_at))
                else:
                    dropped += 1
            if scan_idx % cfg.plan_every == 0:
                push(t + t_plan, "plan", (scan, odom_scan, t))
            scan_idx += 1

        # 3. motion over [t, t + tick)
        while pending and pending[0][0] <= t:
            active = pending.pop(0)[1]
        prev = state.true_pose
        state = step_motion(state, active, cfg.tick_ms / 1000.0, world, limits)
        contact = contact or state.contact
        a, c = prev.translation, state.true_pose.translation
        travelled += math.hypot(c[0] - a[0], c[1] - a[1])
        t += cfg.tick_ms
        with _Timer(clock, "odometry"):
            odom_now = odo.update(state.true_pose)
        odom_hist[t] = odom_now
        odom_hist.pop(t - 4 * cfg.scan_period_ms, None)
        if t % cfg.scan_period_ms == 0:
            p = project_se2(state.true_pose)
            trajectory.append([t / 1000.0, p.x, p.y, p.yaw])

    end_ms = finished_at if finished_at is not None else min(t, timeout_ms)
    timed_out = finished_at is None and not reason
    if timed_out:
        reason = "timeout"
    if geodesic_failure and not reason:
        reason = f"geodesic: {geodesic_failure}"
    true_final = project_se2(state.true_pose)
    if trajectory[-1][1:3] != [true_final.x, true_final.y]:
        trajectory.append([t / 1000.0, true_final.x, true_final.y, true_final.yaw])
    final_distance = math.hypot(true_final.x - goal_xy[0], true_final.y - goal_xy[1])
    success = (finished_at is not None and final_distance <= cfg.success_radius and not contact
               and not geodesic_failure)
    if contact and not reason:
        reason = "contact"
    # counterfactual on the same true trajectory: the first fix held for the whole mission
    odom_only = predict_pose(first_fix or correction, odom_now).translation
    corrected = predict_pose(correction, odom_now).translation
    tt = state.true_pose.translation
    return TrialRecord(
        goal_name=cfg.goal_name, seed=cfg.seed, success=bool(success),
        path_length=float(travelled), geodesic=float(ell), elapsed=end_ms / 1000.0,
        final_distance=float(final_distance), contact=bool(contact), timed_out=bool(timed_out),
        reason=reason, start=[s.x, s.y, s.yaw], goal=[cfg.goal.x, cfg.goal.y, cfg.goal.yaw],
        corrections=[[float(a), float(c)] for a, c in corrections], correction_stamps=correction_stamps,
        odom_only_error=float(math.hypot(odom_only[0] - tt[0], odom_only[1] - tt[1])),
        corrected_error=float(math.hypot(corrected[0] - tt[0], corrected[1] - tt[1])),
        latency=latency, localization=loc_log, dropped_scans=dropped,
        commands=commands, trajectory=trajectory,
        geodesic_path=[[float(x), float(y)] for x, y in ref_path],
        wall_clock=clock,
    )


def executed_path_length(record: TrialRecord) -> float:
    """Length of the logged (decimated) trajectory."""
    return path_length(np.asarray(record.trajectory)[:, 1:3])


# --- suites -------------------------------------------------------------------------

@dataclass(frozen=True)
class GoalSpec:
    """A goal pose name and the start pose names used by its repetitions
    (repetition k starts from ``starts[k % len(starts)]``)."""

    name: str
    goal: str
    starts: tuple[str, ...] = ("entrance",)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GoalSpec":
        try:
            starts = d.get("starts", ["entrance"])
            if isinstance(starts, str):
                starts = [starts]
            return cls(str(d["name"]), str(d.get("goal", d["name"])), tuple(str(s) for s in starts))
        except KeyError as exc:
            raise MissionError(f"goal entry missing {exc}") from None


def suite_configs(world: WorldMap, goals: Sequence[GoalSpec], seeds: Sequence[int],
                  **overrides) -> list[MissionConfig]:
    """One MissionConfig per (goal, seed), goals outermost."""
    out = []
    for g in goals:
        if not g.starts:
            raise MissionError(f"goal {g.name} has no start poses")
        for k, seed in enumerate(seeds):
            start_name = g.starts[k % len(g.starts)]
            for pose_name in (start_name, g.goal):
                if pose_name not in world.poses:
                    raise MissionError(f"world has no pose named {pose_name!r}")
            out.append(MissionConfig(world.poses[start_name], world.poses[g.goal], g.name,
                                     seed=int(seed), **overrides))
    return out


def failed_record(cfg: MissionConfig, reason: str) -> TrialRecord:
    """Record for a trial that crashed before producing its own."""
    s, g = cfg.start, cfg.goal
    return TrialRecord(
        goal_name=cfg.goal_name, seed=cfg.seed, success=False, path_length=0.0, geodesic=math.nan,
        elapsed=0.0, final_distance=math.hypot(g.x - s.x, g.y - s.y), contact=False, timed_out=False,
        reason=reason, start=[s.x, s.y, s.yaw], goal=[g.x, g.y, g.yaw], corrections=[],
        correction_stamps=[], odom_only_error=math.nan, corrected_error=math.nan, latency=[],
        localization=[], dropped_scans=0, commands=[], trajectory=[[0.0, s.x, s.y, s.yaw]])


def safe_trial(cfg: MissionConfig, res: MissionResources) -> TrialRecord:
    try:
        return run_trial(cfg, res)
    except Exception as exc:      # a crash is a failed trial, not a failed run
        return failed_record(cfg, f"crash: {type(exc).__name__}: {exc}")


_worker_resources: MissionResources | None = None


def _init_worker(res: MissionResources) -> None:
    global _worker_resources
    _worker_resources = res


def _worker_trial(cfg: MissionConfig) -> TrialRecord:
    assert _worker_resources is not None
    return safe_trial(cfg, _worker_resources)


def run_suite(configs: Sequence[MissionConfig], res: MissionResources, parallel: int = 1,
              on_record=None) -> list[TrialRecord]:
    """Run every config; records come back in config order whatever
    ``parallel`` is. ``on_record(index, record)`` fires as trials finish."""
    records: list[TrialRecord | None] = [None] * len(configs)
    if parallel <= 1 or len(configs) <= 1:
        for i, cfg in enumerate(configs):
            records[i] = safe_trial(cfg, res)
            if on_record:
                on_record(i, records[i])
        return records  # type: ignore[return-value]
    import multiprocessing as mp
    from concurrent.futures import ProcessPoolExecutor, as_completed

    with ProcessPoolExecutor(max_workers=parallel, mp_context=mp.get_context("fork"),
                             initializer=_init_worker, initargs=(res,)) as pool:
        futures = {pool.submit(_worker_trial, cfg): i for i, cfg in enumerate(configs)}
        for fut in as_completed(futures):
            i = futures[fut]
            records[i] = fut.result()
            if on_record:
                on_record(i, records[i])
    return records  # type: ignore[return-value]
