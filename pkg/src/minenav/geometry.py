"""Rigid transforms, planar poses and point clouds.

Convention: active transforms acting on column vectors. ``compose(a, b)``
is the matrix product T_a @ T_b, so ``b`` is applied first. Quaternions are
stored as (w, x, y, z) with w >= 0 and renormalised after every product.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FRAMES = ("body", "odom", "map")


def wrap_angle(a: float) -> float:
    """Map an angle into (-pi, pi]."""
    w = math.remainder(float(a), 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def _qmul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _qrotate(q, v):
    w, x, y, z = q
    vx, vy, vz = v
    # t = 2 * cross(q_vec, v); v' = v + w t + cross(q_vec, t)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def _canonical(q):
    w, x, y, z = (float(c) for c in q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if not math.isfinite(n) or n == 0.0:
        raise ValueError(f"invalid quaternion {q!r}")
    if w < 0.0:
        n = -n
    return (w / n, x / n, y / n, z / n)


def _quat_from_matrix(R: np.ndarray):
    # Shepperd's method, branch on the largest diagonal term.
    m = np.asarray(R, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        return (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        return ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    if m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        return ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
    return ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)


@dataclass(frozen=True, slots=True)
class RigidTransform:
    """SE(3) element: translation in metres, unit quaternion (w, x, y, z)."""

    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        t = tuple(float(c) for c in self.translation)
        if len(t) != 3 or not all(math.isfinite(c) for c in t):
            raise ValueError(f"invalid translation {self.translation!r}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", _canonical(self.rotation))

    # constructors -------------------------------------------------------
    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float = 0.0) -> "RigidTransform":
        return cls((x, y, z))

    @classmethod
    def from_rpy(cls, roll: float, pitch: float, yaw: float,
                 translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "RigidTransform":
        """Intrinsic Z-Y-X Euler angles: R = Rz(yaw) Ry(pitch) Rx(roll)."""
        cr, sr = math.cos(roll / 2), math.sin(roll / 2)
        cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
        cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
        q = (
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        )
        return cls(tuple(translation), q)

    @classmethod
    def from_xyz_rpy(cls, x, y, z, roll, pitch, yaw) -> "RigidTransform":
        return cls.from_rpy(roll, pitch, yaw, (x, y, z))

    @classmethod
    def from_yaw(cls, yaw: float, x: float = 0.0, y: float = 0.0, z: float = 0.0) -> "RigidTransform":
        return cls((x, y, z), (math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape == (3, 3):
            return cls((0.0, 0.0, 0.0), _quat_from_matrix(m))
        if m.shape != (4, 4):
            raise ValueError("expected a 3x3 or 4x4 matrix")
        return cls(tuple(m[:3, 3]), _quat_from_matrix(m[:3, :3]))

    @classmethod
    def from_list(cls, v: Sequence[float]) -> "RigidTransform":
        """Inverse of :meth:`as_list` (tx, ty, tz, qw, qx, qy, qz)."""
        if len(v) != 7:
            raise ValueError("expected 7 numbers: tx ty tz qw qx qy qz")
        return cls(tuple(v[:3]), tuple(v[3:]))

    # algebra ------------------------------------------------------------
    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        if not isinstance(other, RigidTransform):
            return NotImplemented
        rt = _qrotate(self.rotation, other.translation)
        t = self.translation
        return RigidTransform((t[0] + rt[0], t[1] + rt[1], t[2] + rt[2]),
                              _qmul(self.rotation, other.rotation))

    def inverse(self) -> "RigidTransform":
        w, x, y, z = self.rotation
        qi = (w, -x, -y, -z)
        t = _qrotate(qi, self.translation)
        return RigidTransform((-t[0], -t[1], -t[2]), qi)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 3) array (or a single 3-vector)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix().T + np.asarray(self.translation)

    # views --------------------------------------------------------------
    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def rpy(self) -> tuple[float, float, float]:
        w, x, y, z = self.rotation
        roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
        sp = max(-1.0, min(1.0, 2 * (w * y - z * x)))
        pitch = math.asin(sp)
        yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
        return roll, pitch, yaw

    def xyz_rpy(self) -> np.ndarray:
        return np.array([*self.translation, *self.rpy()])

    @property
    def yaw(self) -> float:
        return project_se2(self).yaw

    def as_list(self) -> list[float]:
        return [*self.translation, *self.rotation]

    def rotation_angle(self) -> float:
        """Magnitude of the rotation in radians."""
        return 2.0 * math.atan2(math.sqrt(sum(c * c for c in self.rotation[1:])), abs(self.rotation[0]))

    def distance_to(self, other: "RigidTransform") -> float:
        return math.dist(self.translation, other.translation)

    def allclose(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        a = self.as_list()
        b = other.as_list()
        return all(abs(x - y) <= tol for x, y in zip(a, b))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """T_a @ T_b: apply ``b`` first, then ``a``."""
    return a @ b


def inverse(t: RigidTransform) -> RigidTransform:
    return t.inverse()


@dataclass(frozen=True, slots=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def compose(self, other: "Pose2") -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(self.x + c * other.x - s * other.y,
                     self.y + s * other.x + c * other.y,
                     self.yaw + other.yaw)

    def to_local(self, px: float, py: float) -> tuple[float, float]:
        """Express a world point in this pose's frame."""
        dx, dy = px - self.x, py - self.y
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return c * dx + s * dy, -s * dx + c * dy

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def to_transform(self, z: float = 0.0) -> RigidTransform:
        return RigidTransform.from_yaw(self.yaw, self.x, self.y, z)


def project_se2(t: RigidTransform) -> Pose2:
    """Planar pose: position XY and heading of the rotated x-axis."""
    w, x, y, z = t.rotation
    r00 = 1 - 2 * (y * y + z * z)
    r10 = 2 * (x * y + w * z)
    return Pose2(t.translation[0], t.translation[1], math.atan2(r10, r00))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """(N, 4) array of x, y, z, intensity plus frame and timestamp."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    frame_id: str = "body"
    stamp: float = 0.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.points, dtype=np.float64)
        if arr.size == 0:
            arr = np.zeros((0, 4))
        if arr.ndim != 2 or arr.shape[1] not in (3, 4):
            raise ValueError(f"points must be (N, 3) or (N, 4), got {arr.shape}")
        if arr.shape[1] == 3:
            arr = np.hstack([arr, np.zeros((len(arr), 1))])
        if not np.all(np.isfinite(arr)):
            raise ValueError("point cloud contains non-finite values")
        if self.frame_id not in FRAMES:
            raise ValueError(f"frame_id must be one of {FRAMES}, got {self.frame_id!r}")
        arr = np.array(arr, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)
        object.__setattr__(self, "stamp", float(self.stamp))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def select(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[mask], self.frame_id, self.stamp)

    def with_intensity(self, values: np.ndarray) -> "PointCloud":
        pts = np.array(self.points)
        pts[:, 3] = values
        return PointCloud(pts, self.frame_id, self.stamp)

    def equals(self, other: "PointCloud", tol: float = 0.0) -> bool:
        return (self.frame_id == other.frame_id and self.stamp == other.stamp
                and self.points.shape == other.points.shape
                and bool(np.all(np.abs(self.points - other.points) <= tol)))

    @staticmethod
    def concatenate(clouds: Iterable["PointCloud"], frame_id: str = "map", stamp: float = 0.0) -> "PointCloud":
        parts = [c.points for c in clouds]
        return PointCloud(np.vstack(parts) if parts else np.zeros((0, 4)), frame_id, stamp)


def transform_cloud(t: RigidTransform, c: PointCloud, frame_id: str | None = None) -> PointCloud:
    """Map every point by ``t``; intensity and stamp are kept."""
    pts = np.array(c.points)
    if len(pts):
        pts[:, :3] = t.apply(pts[:, :3])
    return PointCloud(pts, frame_id or c.frame_id, c.stamp)


def voxel_downsample(points: np.ndarray, voxel: float, origin: Sequence[float] | None = None) -> np.ndarray:
    """Replace the points of each occupied voxel by their mean.

    Works on any (N, k) array whose first three columns are x, y, z; the
    output is ordered by voxel index so the result is deterministic.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return pts.reshape(0, pts.shape[1] if pts.ndim == 2 else 4)
    org = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    keys = np.floor((pts[:, :3] - org) / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    out = np.empty((len(counts), pts.shape[1]))
    for col in range(pts.shape[1]):
        out[:, col] = np.bincount(inv, weights=pts[:, col], minlength=len(counts)) / counts
    return out
