"""Unicycle robot motion and a drifting odometry source."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from ..geometry import RigidTransform, project_se2
from .world import WorldMap


@dataclass(frozen=True)
class RobotLimits:
    v_max: float = 0.5
    w_max: float = 1.0
    body_radius: float = 0.3
    body_height: float = 0.5     # body frame origin above the floor


@dataclass(frozen=True)
class RobotState:
    true_pose: RigidTransform
    v: float = 0.0
    w: float = 0.0
    time: float = 0.0
    contact: bool = False


def step_motion(state: RobotState, cmd, dt: float, world: WorldMap | None = None,
                limits: RobotLimits = RobotLimits()) -> RobotState:
    """Advance by ``dt`` along the exact unicycle arc.

    ``cmd`` is a (v, w) pair or anything with ``v`` and ``w`` attributes.
    With a world, the body follows the floor height and a move that would
    bring the body disc into a wall is refused and flagged as contact.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v, w = (cmd.v, cmd.w) if hasattr(cmd, "v") else cmd
    v = max(-limits.v_max, min(limits.v_max, float(v)))
    w = max(-limits.w_max, min(limits.w_max, float(w)))
    p = project_se2(state.true_pose)
    th = p.yaw
    if abs(w) < 1e-9:
        x = p.x + v * dt * math.cos(th)
        y = p.y + v * dt * math.sin(th)
    else:
        r = v / w
        x = p.x + r * (math.sin(th + w * dt) - math.sin(th))
        y = p.y - r * (math.cos(th + w * dt) - math.cos(th))
    yaw = th + w * dt
    z = state.true_pose.translation[2]
    if world is not None:
        if world.clearance_at(x, y) < limits.body_radius:
            return RobotState(state.true_pose, v, w, state.time + dt, True)
        z = world.floor_at(x, y) + limits.body_height
    return RobotState(RigidTransform.from_yaw(yaw, x, y, z), v, w, state.time + dt, False)


@dataclass(frozen=True)
class OdometryModel:
    """Drift parameters for the odometry stand-in.

    trans_bias is added per metre travelled, in the body frame; yaw_bias per
    radian turned. Noise is a seeded random walk in distance: its standard
    deviation grows with the square root of the metres travelled, so a
    robot standing still does not drift.
    """

    trans_bias: tuple[float, float, float] = (0.032, 0.004, 0.0)
    yaw_bias: float = 0.015
    noise_std: float = 0.002           # m per sqrt(m)
    yaw_noise_std: float = 0.0003      # rad per sqrt(m)
    seed: int = 0


@dataclass
class DriftingOdometry:
    model: OdometryModel = field(default_factory=OdometryModel)

    def __post_init__(self) -> None:
        self._rng = np.random.Generator(np.random.PCG64(self.model.seed))
        self._prev_true: RigidTransform | None = None
        self.pose = RigidTransform.identity()

    def update(self, true_pose: RigidTransform) -> RigidTransform:
        """Feed the next true pose; returns the odometry-frame pose."""
        if self._prev_true is None:
            self._prev_true = true_pose
            return self.pose
        m = self.model
        delta = self._prev_true.inverse() @ true_pose
        self._prev_true = true_pose
        dist = math.sqrt(sum(c * c for c in delta.translation))
        dyaw = project_se2(delta).yaw
        noise = self._rng.normal(0.0, 1.0, size=4) * math.sqrt(dist)
        t = [delta.translation[k] + m.trans_bias[k] * dist + m.noise_std * noise[k] for k in range(3)]
        extra_yaw = m.yaw_bias * abs(dyaw) + m.yaw_noise_std * noise[3]
        corrupted = RigidTransform(tuple(t), delta.rotation) @ RigidTransform.from_yaw(extra_yaw)
        self.pose = self.pose @ corrupted
        return self.pose


def odom_pose(model: OdometryModel, true_pose_stream: Iterable[RigidTransform]) -> Iterator[RigidTransform]:
    odo = DriftingOdometry(model)
    for p in true_pose_stream:
        yield odo.update(p)
