"""Multi-channel spinning LiDAR simulated by grid ray casting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import kernels
from ..geometry import PointCloud, RigidTransform
from .world import WorldMap


class EmbeddedError(RuntimeError):
    """Sensor origin lies inside rock."""


@dataclass(frozen=True)
class LidarConfig:
    channels: int = 16
    fov_min_deg: float = -15.0
    fov_max_deg: float = 15.0
    horizontal_rays: int = 360
    min_range: float = 0.75
    max_range: float = 30.0
    rate_hz: float = 10.0
    range_noise: float = 0.0

    def __post_init__(self) -> None:
        if self.channels < 1 or self.horizontal_rays < 1:
            raise ValueError("need at least one channel and one ray per revolution")
        if not 0 <= self.min_range < self.max_range:
            raise ValueError("min_range must be below max_range")
        if self.fov_min_deg > self.fov_max_deg:
            raise ValueError("vertical field of view is inverted")

    def directions(self) -> np.ndarray:
        """Unit ray directions in the body frame, channel-major."""
        return _directions(self.channels, self.fov_min_deg, self.fov_max_deg, self.horizontal_rays)


@lru_cache(maxsize=16)
def _directions(channels, lo, hi, nh):
    elev = np.radians(np.linspace(lo, hi, channels)) if channels > 1 else np.radians([0.5 * (lo + hi)])
    az = np.arange(nh) * (2.0 * math.pi / nh)
    e, a = np.meshgrid(elev, az, indexing="ij")
    d = np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1).reshape(-1, 3)
    d.setflags(write=False)
    return d


def cast_scan(world: WorldMap, pose: RigidTransform, cfg: LidarConfig = LidarConfig(),
              stamp: float = 0.0, rng: np.random.Generator | None = None,
              return_kinds: bool = False):
    """Body-frame scan from ``pose``.

    With ``return_kinds`` the per-point surface label (floor/wall/ceiling,
    see ``kernels.HIT_*``) is returned alongside the cloud.
    """
    sx, sy, sz = pose.translation
    if not world.is_free(sx, sy):
        raise EmbeddedError(f"embedded: sensor at ({sx:.3f}, {sy:.3f}) is inside a wall")
    i, j = world.cell_of(sx, sy)
    if not world.floor_z[i, j] < sz < world.ceiling_z[i, j]:
        raise EmbeddedError(f"embedded: sensor height {sz:.3f} outside the passage")
    dirs_body = cfg.directions()
    dirs_map = np.ascontiguousarray(dirs_body @ pose.rotation_matrix().T)
    ranges, kinds = kernels.cast_rays(world.occupancy, world.floor_z, world.ceiling_z,
                                      world.origin[0], world.origin[1], world.resolution,
                                      sx, sy, sz, dirs_map, cfg.max_range)
    if cfg.range_noise > 0 and rng is not None:
        ranges = ranges + rng.normal(0.0, cfg.range_noise, size=ranges.shape)
    ok = (kinds >= 0) & (ranges >= cfg.min_range) & (ranges < cfg.max_range)
    pts = dirs_body[ok] * ranges[ok, None]
    cloud = PointCloud(pts, "body", stamp)
    if return_kinds:
        return cloud, kinds[ok].copy()
    return cloud
