"""Prior-map capture: one scripted pass along every corridor centreline,
scans registered with the true poses."""
from __future__ import annotations

import math

import numpy as np

from ..geometry import PointCloud, RigidTransform, voxel_downsample
from .lidar import LidarConfig, cast_scan
from .motion import RobotLimits
from .world import WorldMap, WorldSpec


def survey_poses(spec: WorldSpec, world: WorldMap, step: float = 1.0,
                 body_height: float = RobotLimits().body_height) -> list[RigidTransform]:
    """Poses every ``step`` metres along each corridor polyline, heading
    along the segment."""
    poses = []
    for cor in spec.corridors:
        for a, b in cor.segments:
            d = b[:2] - a[:2]
            length = float(np.hypot(*d))
            yaw = math.atan2(d[1], d[0])
            n = max(1, int(math.ceil(length / step)))
            for k in range(n + 1):
                x, y = a[:2] + d * (k / n)
                if world.clearance_at(x, y) <= 0:
                    continue
                poses.append(RigidTransform.from_yaw(yaw, x, y, world.floor_at(x, y) + body_height))
    return poses


def survey_map(world: WorldMap, spec: WorldSpec, cfg: LidarConfig = LidarConfig(), step: float = 1.0,
               voxel: float = 0.1) -> PointCloud:
    """Map-frame cloud from the scripted pass, voxel-downsampled."""
    chunks = []
    for pose in survey_poses(spec, world, step):
        scan = cast_scan(world, pose, cfg)
        chunks.append(pose.apply(scan.xyz))
    if not chunks:
        return PointCloud(np.zeros((0, 4)), "map")
    pts = voxel_downsample(np.vstack(chunks), voxel, origin=(0.0, 0.0, 0.0))
    return PointCloud(np.hstack([pts, np.zeros((len(pts), 1))]), "map")
