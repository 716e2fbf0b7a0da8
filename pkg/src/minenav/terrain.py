"""Ground/obstacle labelling: ceiling cut plus an approximate progressive
morphological filter on a min-z raster.

Labels go to the intensity channel: 0.0 ground, 1.0 obstacle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import PointCloud

GROUND = 0.0
OBSTACLE = 1.0


@dataclass(frozen=True)
class CeilingParams:
    z_max: float = 1.5

    def __post_init__(self) -> None:
        if self.z_max <= 0:
            raise ValueError("z_max must be positive")


@dataclass(frozen=True)
class PmfParams:
    cell_size: float = 0.25
    initial_window: int = 1
    max_window: int = 16
    slope: float = 0.02              # mine floors are nearly level
    initial_distance: float = 0.02
    max_distance: float = 0.5

    def __post_init__(self) -> None:
        if self.initial_window < 1:
            raise ValueError("initial_window must be >= 1")
        if not self.initial_distance < self.max_distance:
            raise ValueError("initial_distance must be below max_distance")
        if self.slope < 0:
            raise ValueError("slope must be non-negative")

    def schedule(self) -> list[tuple[int, float]]:
        """(window, height threshold) pairs, smallest window first."""
        out: list[tuple[int, float]] = []
        k = 1
        prev = None
        while True:
            w = 2 ** k * self.initial_window + 1
            if w > self.max_window:
                break
            if prev is None:
                dh = self.initial_distance
            else:
                dh = min(self.slope * (w - prev) * self.cell_size + self.initial_distance, self.max_distance)
            out.append((w, dh))
            prev = w
            k += 1
        return out


def ceiling_filter(cloud: PointCloud, p: CeilingParams = CeilingParams()) -> PointCloud:
    """Keep points with z <= z_max (body frame), in order."""
    if len(cloud) == 0:
        return cloud
    return cloud.select(cloud.points[:, 2] <= p.z_max)


def _open(surface: np.ndarray, observed: np.ndarray, w: int) -> np.ndarray:
    """Grey opening with a w x w square that ignores unobserved cells."""
    eroded = ndimage.minimum_filter(np.where(observed, surface, np.inf), size=w, mode="constant", cval=np.inf)
    eroded = np.where(observed & np.isfinite(eroded), eroded, -np.inf)
    # even windows are off-centre; the dilation uses the reflected window
    origin = 0 if w % 2 else -1
    return ndimage.maximum_filter(eroded, size=w, mode="constant", cval=-np.inf, origin=origin)


def pmf_labels(xyz: np.ndarray, p: PmfParams = PmfParams()) -> np.ndarray:
    """Boolean obstacle flag per point."""
    pts = np.asarray(xyz, dtype=np.float64)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    c = p.cell_size
    ij = np.floor(pts[:, :2] / c).astype(np.int64)
    lo = ij.min(axis=0)
    ij -= lo
    shape = tuple(ij.max(axis=0) + 1)
    flat = ij[:, 0] * shape[1] + ij[:, 1]
    zmin = np.full(shape[0] * shape[1], np.inf)
    np.minimum.at(zmin, flat, pts[:, 2])
    zmin = zmin.reshape(shape)
    observed = np.isfinite(zmin)
    surface = zmin
    obstacle = np.zeros(len(pts), dtype=bool)
    for w, dh in p.schedule():
        surface = np.where(observed, _open(surface, observed, w), np.inf)
        obstacle |= pts[:, 2] - surface.reshape(-1)[flat] > dh
    return obstacle


def pmf_segment(cloud: PointCloud, p: PmfParams = PmfParams()) -> PointCloud:
    """Label every point ground (0.0) or obstacle (1.0) via intensity."""
    if len(cloud) == 0:
        return cloud
    obstacle = pmf_labels(cloud.xyz, p)
    return cloud.with_intensity(np.where(obstacle, OBSTACLE, GROUND))


def segment_scan(cloud: PointCloud, ceiling: CeilingParams = CeilingParams(),
                 pmf: PmfParams = PmfParams()) -> PointCloud:
    """Body-frame scan in, labelled body-frame cloud out."""
    return pmf_segment(ceiling_filter(cloud, ceiling), pmf)


def segment_map_cloud(cloud: PointCloud, clearance_height: float, pmf: PmfParams = PmfParams()) -> PointCloud:
    """Label a whole prior map.

    The map spans varying floor heights, so the ceiling cut is taken
    relative to the opened ground surface instead of a fixed z.
    """
    if len(cloud) == 0:
        return cloud
    labels = pmf_segment(cloud, pmf)
    pts = labels.points
    ground = pts[:, 3] == GROUND
    c = pmf.cell_size
    # per-cell ground height, spread to neighbours so wall cells get one too
    ij = np.floor(pts[:, :2] / c).astype(np.int64)
    lo = ij.min(axis=0)
    ij -= lo
    shape = tuple(ij.max(axis=0) + 1)
    flat = ij[:, 0] * shape[1] + ij[:, 1]
    gz = np.full(shape[0] * shape[1], np.inf)
    if ground.any():
        np.minimum.at(gz, flat[ground], pts[ground, 2])
    gz = gz.reshape(shape)
    known = np.isfinite(gz)
    if known.any():
        idx = ndimage.distance_transform_edt(~known, return_distances=False, return_indices=True)
        gz = gz[idx[0], idx[1]]
        keep = pts[:, 2] - gz.reshape(-1)[flat] <= clearance_height
    else:
        keep = np.ones(len(pts), dtype=bool)
    return labels.select(keep)
