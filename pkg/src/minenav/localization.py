"""Map-based NDT localization and the map->odom correction transform.

The prior map is summarised as per-voxel Gaussians. A scan is aligned by
maximising sum_p exp(-0.5 q^T S^-1 q) with Newton steps on
(x, y, z, roll, pitch, yaw). The resulting map-frame pose refines the
correction: T_map_odom <- T_map_base_hat @ inv(T_odom_base).
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

import numpy as np

from . import kernels
from .geometry import PointCloud, RigidTransform, voxel_downsample


class LocalizationError(ValueError):
    pass


@dataclass(frozen=True)
class NdtParams:
    voxel_size: float = 1.0
    max_iterations: int = 30
    epsilon: float = 1e-3            # ||dt|| + 0.5 ||dr|| below this ends a stage
    step_halvings: int = 4
    max_step: float = 0.5            # cap on ||dt|| + 0.5 ||dr|| per Newton step
    min_points: int = 5
    eig_floor_ratio: float = 1e-3
    abs_eig_floor: float = 1e-6      # m^2, only bites on degenerate voxels
    scan_voxel: float = 0.5
    max_scan_points: int = 2000
    anneal_sigmas: tuple[float, ...] = (0.5, 0.25, 0.1)
    skip_anneal_fitness: float = 0.5
    min_fitness: float = 0.35
    settle_step: float = 0.01        # a first sharp Newton step below this skips annealing

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.voxel_size <= 0 or self.scan_voxel <= 0:
            raise ValueError("voxel sizes must be positive")


@dataclass(eq=False)
class NdtGrid:
    voxel_size: float
    origin: np.ndarray           # (3,)
    lookup: np.ndarray           # int32 (nx, ny, nz), -1 for empty
    counts: np.ndarray
    means: np.ndarray            # (M, 3)
    covariances: np.ndarray      # (M, 3, 3), regularised
    eigvals: np.ndarray          # (M, 3)
    eigvecs: np.ndarray          # (M, 3, 3)
    _icov_cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.means)

    def inverse_covariances(self, sigma: float = 0.0) -> np.ndarray:
        """(S + sigma^2 I)^-1 for every voxel, cached per sigma."""
        key = round(float(sigma), 9)
        icov = self._icov_cache.get(key)
        if icov is None:
            lam = self.eigvals + sigma * sigma
            V = self.eigvecs
            icov = np.ascontiguousarray(np.einsum("kij,kj,klj->kil", V, 1.0 / lam, V))
            self._icov_cache[key] = icov
        return icov


def build_ndt_grid(map_cloud: PointCloud, params: NdtParams = NdtParams()) -> NdtGrid:
    pts = np.asarray(map_cloud.xyz, dtype=np.float64)
    if len(pts) == 0:
        raise LocalizationError("cannot build an NDT grid from an empty cloud")
    vs = params.voxel_size
    origin = np.floor(pts.min(axis=0) / vs) * vs - 0.5 * vs
    keys = np.floor((pts - origin) / vs).astype(np.int64)
    uniq, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    sums = np.stack([np.bincount(inv, weights=pts[:, c], minlength=len(uniq)) for c in range(3)], axis=1)
    means = sums / counts[:, None]
    d = pts - means[inv]
    cov = np.empty((len(uniq), 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(inv, weights=d[:, a] * d[:, b], minlength=len(uniq))
            cov[:, a, b] = cov[:, b, a] = s / np.maximum(counts - 1, 1)
    keep = counts >= params.min_points
    uniq, counts, means, cov = uniq[keep], counts[keep], means[keep], cov[keep]
    if len(uniq) == 0:
        raise LocalizationError(f"no voxel holds at least {params.min_points} points")
    lam, V = np.linalg.eigh(cov)
    floor = np.maximum(params.eig_floor_ratio * lam[:, -1:], params.abs_eig_floor)
    lam = np.maximum(lam, floor)
    cov = np.einsum("kij,kj,klj->kil", V, lam, V)
    dims = uniq.max(axis=0) + 1
    lookup = np.full(tuple(dims), -1, dtype=np.int32)
    lookup[uniq[:, 0], uniq[:, 1], uniq[:, 2]] = np.arange(len(uniq), dtype=np.int32)
    return NdtGrid(vs, origin, lookup, counts, means, cov, lam, V)


def _rot(axis: int, a: float, order: int) -> np.ndarray:
    """order-th derivative of the elementary rotation about ``axis``."""
    c, s = math.cos(a), math.sin(a)
    # derivatives of (c, s): 0 -> (c, s), 1 -> (-s, c), 2 -> (-c, -s)
    dc, ds = [(c, s), (-s, c), (-c, -s)][order]
    one = 1.0 if order == 0 else 0.0
    if axis == 0:
        return np.array([[one, 0, 0], [0, dc, -ds], [0, ds, dc]])
    if axis == 1:
        return np.array([[dc, 0, ds], [0, one, 0], [-ds, 0, dc]])
    return np.array([[dc, -ds, 0], [ds, dc, 0], [0, 0, one]])


def rotation_derivatives(roll: float, pitch: float, yaw: float):
    """R = Rz Ry Rx and its first/second partial derivatives."""
    X = [_rot(0, roll, k) for k in range(3)]
    Y = [_rot(1, pitch, k) for k in range(3)]
    Z = [_rot(2, yaw, k) for k in range(3)]

    def R(i, j, k):
        return Z[k] @ Y[j] @ X[i]

    dR = np.stack([R(1, 0, 0), R(0, 1, 0), R(0, 0, 1)])
    d2R = np.stack([R(2, 0, 0), R(1, 1, 0), R(1, 0, 1), R(0, 2, 0), R(0, 1, 1), R(0, 0, 2)])
    return R(0, 0, 0), np.ascontiguousarray(dR), np.ascontiguousarray(d2R)


def _evaluate(grid: NdtGrid, pts: np.ndarray, x: np.ndarray, icov: np.ndarray, derivs: bool):
    R, dR, d2R = rotation_derivatives(x[3], x[4], x[5])
    return kernels.ndt_derivatives(pts, np.ascontiguousarray(R), np.ascontiguousarray(x[:3]), dR, d2R,
                                   grid.lookup, grid.origin, grid.voxel_size, grid.means, icov, derivs)


def ndt_score(grid: NdtGrid, pts: np.ndarray, x: np.ndarray, sigma: float = 0.0, derivs: bool = True):
    """Score, gradient and Hessian at pose parameters ``x`` (6-vector)."""
    pts = np.ascontiguousarray(pts, dtype=np.float64)
    return _evaluate(grid, pts, np.asarray(x, dtype=np.float64), grid.inverse_covariances(sigma), derivs)


def prepare_scan(scan: PointCloud, params: NdtParams) -> np.ndarray:
    """Voxel filter the scan and cap the point count (uniform stride)."""
    pts = voxel_downsample(scan.xyz, params.scan_voxel)
    if len(pts) > params.max_scan_points:
        idx = np.linspace(0, len(pts) - 1, params.max_scan_points).round().astype(np.int64)
        pts = pts[idx]
    return np.ascontiguousarray(pts)


@dataclass(frozen=True)
class NdtResult:
    pose: RigidTransform
    score: float
    converged: bool
    iterations: int
    fitness: float
    scores: tuple[float, ...] = ()     # score after each accepted step, per stage


def _params_to_pose(x: np.ndarray) -> RigidTransform:
    return RigidTransform.from_xyz_rpy(*(float(v) for v in x))


def _newton_direction(g: np.ndarray, H: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(H)
    mag = np.abs(lam)
    floor = max(1e-9 * float(mag.max(initial=0.0)), 1e-12)
    lam_neg = -np.maximum(mag, floor)
    return -(V @ ((V.T @ g) / lam_neg))


def ndt_align(grid: NdtGrid, scan: PointCloud, initial_guess: RigidTransform,
              params: NdtParams = NdtParams(), prepared: np.ndarray | None = None) -> NdtResult:
    """Align a body-frame scan to the grid starting from ``initial_guess``.

    Coarse stages inflate every voxel covariance by sigma^2 I to widen the
    basin; they are skipped when the guess already fits well. The best
    pose found is returned whether or not the run converged.
    """
    if grid is None or len(grid) == 0:
        raise LocalizationError("NDT grid is empty")
    x = initial_guess.xyz_rpy()
    if not np.all(np.isfinite(x)):
        raise LocalizationError("initial guess is not finite")
    pts = prepared if prepared is not None else prepare_scan(scan, params)
    if len(pts) == 0:
        return NdtResult(initial_guess, 0.0, False, 0, 0.0)
    n = len(pts)

    # annealing is skipped when the guess already fits well or already sits
    # next to an optimum of the sharp score
    score0, g0, H0 = _evaluate(grid, pts, x, grid.inverse_covariances(0.0), True)
    step0 = _newton_direction(g0, H0)
    settled = (np.linalg.norm(step0[:3]) + 0.5 * np.linalg.norm(step0[3:]) < params.settle_step
               and score0 / n >= params.min_fitness)
    stages: list[float] = [] if settled or score0 / n >= params.skip_anneal_fitness else list(params.anneal_sigmas)
    stages.append(0.0)

    iterations = 0
    history: list[float] = []
    reason = "budget"
    for sigma in stages:
        icov = grid.inverse_covariances(sigma)
        score, g, H = _evaluate(grid, pts, x, icov, True)
        reason = "budget"
        while iterations < params.max_iterations:
            iterations += 1
            step = _newton_direction(g, H)
            size = np.linalg.norm(step[:3]) + 0.5 * np.linalg.norm(step[3:])
            if size < params.epsilon:
                reason = "converged"
                break
            if size > params.max_step:
                step *= params.max_step / size
            accepted = False
            alpha = 1.0
            for _ in range(params.step_halvings + 1):
                cand = x + alpha * step
                cand_score = _evaluate(grid, pts, cand, icov, False)[0]
                if cand_score > score:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                reason = "stalled"
                break
            x = cand
            score, g, H = _evaluate(grid, pts, x, icov, True)
            history.append(score)
    final_score = ndt_score(grid, pts, x, 0.0, derivs=False)[0]
    fitness = final_score / n
    converged = reason in ("converged", "stalled") and fitness >= params.min_fitness
    pose = initial_guess if np.array_equal(x, initial_guess.xyz_rpy()) else _params_to_pose(x)
    return NdtResult(pose, float(final_score), bool(converged), iterations, float(fitness), tuple(history))


# --- correction transform -------------------------------------------------

@dataclass(frozen=True)
class CorrectionState:
    map_from_odom: RigidTransform
    stamp: float = 0.0
    score: float = 0.0
    converged: bool = False

    @classmethod
    def from_initial_pose(cls, map_from_base: RigidTransform, odom_from_base: RigidTransform | None = None,
                          stamp: float = 0.0) -> "CorrectionState":
        """Seed from an operator-supplied map pose of the robot."""
        odom = odom_from_base or RigidTransform.identity()
        return cls(map_from_base @ odom.inverse(), stamp)


def predict_pose(state: CorrectionState, odom_from_base: RigidTransform) -> RigidTransform:
    """T_map_base = T_map_odom @ T_odom_base."""
    return state.map_from_odom @ odom_from_base


def update_correction(state: CorrectionState, refined: RigidTransform, odom_from_base: RigidTransform,
                      stamp: float | None = None, score: float | None = None) -> CorrectionState:
    """T_map_odom <- refined @ inv(T_odom_base)."""
    return CorrectionState(refined @ odom_from_base.inverse(),
                           state.stamp if stamp is None else stamp,
                           state.score if score is None else score,
                           True)


class CorrectionHolder:
    """Shared slot for the current correction; swaps are atomic."""

    def __init__(self, state: CorrectionState):
        self._lock = threading.Lock()
        self._state = state

    def get(self) -> CorrectionState:
        with self._lock:
            return self._state

    def set(self, state: CorrectionState) -> None:
        with self._lock:
            self._state = state


StreamItem = Union[tuple[float, RigidTransform], CorrectionState]


def corrected_pose_stream(state: CorrectionState | CorrectionHolder,
                          odometry: Iterable[StreamItem]) -> Iterator[tuple[float, RigidTransform]]:
    """Map each (stamp, odom pose) through the current correction.

    Items of type CorrectionState in the input replace the correction
    before the next message. A CorrectionHolder may also be updated from
    another thread; every message reads one complete state.
    """
    holder = state if isinstance(state, CorrectionHolder) else CorrectionHolder(state)
    for item in odometry:
        if isinstance(item, CorrectionState):
            holder.set(item)
            continue
        stamp, odom = item
        yield stamp, predict_pose(holder.get(), odom)
