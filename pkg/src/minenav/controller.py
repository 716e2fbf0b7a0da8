"""Regulated pure pursuit path follower."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Pose2


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerParams:
    lookahead: float = 0.5
    v_max: float = 0.5
    v_min: float = 0.05
    regulation_radius: float = 0.9
    proximity_distance: float = 1.0
    goal_tolerance: float = 0.3
    w_max: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.v_min < self.v_max:
            raise ValueError("need 0 < v_min < v_max")
        if self.lookahead <= 0 or self.goal_tolerance <= 0:
            raise ValueError("lookahead and goal_tolerance must be positive")
        if self.w_max <= 0 or self.regulation_radius <= 0 or self.proximity_distance <= 0:
            raise ValueError("w_max, regulation_radius and proximity_distance must be positive")


@dataclass(frozen=True)
class VelocityCommand:
    v: float
    w: float
    done: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "done", bool(self.done))

    @classmethod
    def stop(cls) -> "VelocityCommand":
        return cls(0.0, 0.0, True)


def _as_path(path: Sequence[Sequence[float]]) -> np.ndarray:
    p = np.asarray(path, dtype=np.float64).reshape(-1, 2)
    if len(p) == 0:
        raise ControllerError("path is empty")
    return p


def _closest_index(pts: np.ndarray, x: float, y: float) -> tuple[int, float]:
    """Segment index and parameter of the path point closest to (x, y)."""
    if len(pts) == 1:
        return 0, 0.0
    a = pts[:-1]
    d = pts[1:] - a
    l2 = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(l2 > 0, ((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / l2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    q = a + t[:, None] * d
    dist = np.hypot(q[:, 0] - x, q[:, 1] - y)
    k = int(np.argmin(dist))     # first minimum: earliest along the path
    return k, float(t[k])


def lookahead_point(pose: Pose2, path: Sequence[Sequence[float]], lookahead: float) -> np.ndarray:
    """First point at distance ``lookahead`` from the robot, searched
    forward from the closest path point; the path end when none is that
    far."""
    pts = _as_path(path)
    x, y = pose.x, pose.y
    if len(pts) == 1:
        return pts[0].copy()
    k0, t0 = _closest_index(pts, x, y)
    L2 = lookahead * lookahead
    for k in range(k0, len(pts) - 1):
        a, b = pts[k], pts[k + 1]
        d = b - a
        f = a - (x, y)
        A = float(d @ d)
        if A == 0.0:
            continue
        B = 2.0 * float(f @ d)
        C = float(f @ f) - L2
        disc = B * B - 4 * A * C
        if disc < 0:
            continue
        sq = math.sqrt(disc)
        lo = t0 if k == k0 else 0.0
        # the exit crossing of the circle lies ahead of the robot
        for t in ((-B + sq) / (2 * A), (-B - sq) / (2 * A)):
            if lo <= t <= 1.0:
                return a + t * d
    return pts[-1].copy()


def pursuit_step(pose: Pose2, path: Sequence[Sequence[float]], p: ControllerParams = ControllerParams()) -> VelocityCommand:
    pts = _as_path(path)
    goal = pts[-1]
    d_goal = math.hypot(goal[0] - pose.x, goal[1] - pose.y)
    if d_goal <= p.goal_tolerance:
        return VelocityCommand.stop()
    lx, ly = lookahead_point(pose, pts, p.lookahead)
    xl, yl = pose.to_local(lx, ly)
    if xl < 0:
        # target behind: turn in place toward it
        return VelocityCommand(p.v_min, math.copysign(p.w_max, yl) if yl != 0 else p.w_max)
    r2 = xl * xl + yl * yl
    kappa = 2.0 * yl / r2 if r2 > 0 else 0.0
    v = p.v_max
    # turn radius 1/|kappa| below the regulation radius scales v down
    if abs(kappa) * p.regulation_radius > 1.0:
        v *= 1.0 / (abs(kappa) * p.regulation_radius)
    if d_goal < p.proximity_distance:
        v *= d_goal / p.proximity_distance
    v = min(max(v, p.v_min), p.v_max)
    w = kappa * v
    w = min(max(w, -p.w_max), p.w_max)
    return VelocityCommand(v, w)


class PursuitController:
    """pursuit_step plus a goal latch: once done for a path, stays done
    until a path with a different goal arrives."""

    def __init__(self, params: ControllerParams = ControllerParams()):
        self.params = params
        self._latched_goal: tuple[float, float] | None = None

    @property
    def done(self) -> bool:
        return self._latched_goal is not None

    def reset(self) -> None:
        self._latched_goal = None

    def step(self, pose: Pose2, path: Sequence[Sequence[float]]) -> VelocityCommand:
        pts = _as_path(path)
        goal = (float(pts[-1, 0]), float(pts[-1, 1]))
        if self._latched_goal is not None:
            if goal == self._latched_goal:
                return VelocityCommand.stop()
            self._latched_goal = None
        cmd = pursuit_step(pose, pts, self.params)
        if cmd.done:
            self._latched_goal = goal
        return cmd
