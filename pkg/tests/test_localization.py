import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minenav.geometry import PointCloud, RigidTransform, compose, inverse
from minenav.localization import (
    CorrectionHolder,
    CorrectionState,
    LocalizationError,
    NdtParams,
    build_ndt_grid,
    corrected_pose_stream,
    ndt_align,
    predict_pose,
    update_correction,
)
from minenav.sim.lidar import cast_scan

coord = st.floats(-30, 30, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)


@st.composite
def transforms(draw):
    return RigidTransform.from_xyz_rpy(draw(coord), draw(coord), draw(st.floats(-2, 2)),
                                       draw(st.floats(-0.3, 0.3)), draw(st.floats(-0.3, 0.3)), draw(angle))


def yaw_error(a, b):
    return abs(math.remainder(a.yaw - b.yaw, 2 * math.pi))


def xy_error(a, b):
    return math.hypot(a.translation[0] - b.translation[0], a.translation[1] - b.translation[1])


def voxel_cloud(points):
    return PointCloud(np.asarray(points, dtype=np.float64), "map")


class TestGrid:
    def test_identical_points_get_floored_covariance(self):
        grid = build_ndt_grid(voxel_cloud([[0.5, 0.5, 0.5]] * 8))
        assert len(grid) == 1
        assert np.allclose(grid.covariances[0], NdtParams().abs_eig_floor * np.eye(3))

    def test_planar_scatter_regularised(self, rng):
        xy = rng.uniform(0.1, 0.9, size=(50, 2))
        grid = build_ndt_grid(voxel_cloud(np.column_stack([xy, np.full(50, 0.5)])))
        lam = np.linalg.eigvalsh(grid.covariances[0])
        assert lam[0] == pytest.approx(1e-3 * lam[-1], rel=1e-9)

    def test_sparse_voxel_dropped(self):
        pts = [[0.5, 0.5, 0.5]] * 4 + [[5.5, 5.5, 5.5]] * 6
        grid = build_ndt_grid(voxel_cloud(pts))
        assert len(grid) == 1 and np.allclose(grid.means[0], 5.5)

    def test_empty_cloud(self):
        with pytest.raises(LocalizationError):
            build_ndt_grid(voxel_cloud(np.zeros((0, 3))))

    def test_covariances_well_conditioned(self, mine_grid):
        assert np.all(mine_grid.counts >= 5)
        lam = np.linalg.eigvalsh(mine_grid.covariances)
        assert np.all(lam[:, 0] >= 1e-3 * lam[:, -1] * (1 - 1e-9))
        assert np.allclose(mine_grid.covariances, np.transpose(mine_grid.covariances, (0, 2, 1)))


def true_pose(world, name, dyaw=0.0):
    p = world.poses[name]
    return RigidTransform.from_yaw(p.yaw + dyaw, p.x, p.y, world.floor_at(p.x, p.y) + 0.5)


class TestAlign:
    def test_from_truth(self, mine_world, mine_grid):
        T = true_pose(mine_world, "G1")
        r = ndt_align(mine_grid, cast_scan(mine_world, T), T)
        assert r.converged and r.iterations <= 2
        assert r.pose.allclose(T, 1e-6)

    def test_recovers_perturbation(self, mine_world, mine_grid):
        T = true_pose(mine_world, "G3", 0.2)
        guess = compose(T, RigidTransform.from_yaw(math.radians(5), 0.3, -0.2))
        r = ndt_align(mine_grid, cast_scan(mine_world, T), guess)
        assert r.converged
        assert xy_error(r.pose, T) < 0.02 and yaw_error(r.pose, T) < math.radians(0.5)

    def test_aliased_guess_not_accepted(self, mine_world, mine_grid):
        T = true_pose(mine_world, "G1")
        guess = compose(RigidTransform.from_translation(10.0, 0, 0), T)
        r = ndt_align(mine_grid, cast_scan(mine_world, T), guess)
        assert not r.converged
        assert np.all(np.isfinite(r.pose.as_list()))

    @settings(max_examples=15, deadline=None)
    @given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(-0.15, 0.15))
    def test_score_monotone_single_stage(self, mine_world, mine_grid, dx, dy, dyaw):
        T = true_pose(mine_world, "G2")
        guess = compose(T, RigidTransform.from_yaw(dyaw, dx, dy))
        r = ndt_align(mine_grid, cast_scan(mine_world, T), guess, NdtParams(anneal_sigmas=()))
        assert all(b >= a for a, b in zip(r.scores, r.scores[1:]))

    def test_empty_grid_and_bad_guess(self, mine_world, mine_grid):
        T = true_pose(mine_world, "G1")
        scan = cast_scan(mine_world, T)
        with pytest.raises(LocalizationError):
            ndt_align(None, scan, T)
        with pytest.raises((LocalizationError, ValueError)):
            ndt_align(mine_grid, scan, RigidTransform((math.inf, 0, 0)))


class TestCorrection:
    def test_identity_correction(self):
        P = RigidTransform.from_yaw(0.4, 1, 2, 3)
        assert predict_pose(CorrectionState(RigidTransform.identity()), P).allclose(P, 0.0)

    def test_translation_correction(self):
        s = CorrectionState(RigidTransform.from_translation(5, 0, 0))
        assert predict_pose(s, RigidTransform.from_translation(1, 0, 0)).allclose(
            RigidTransform.from_translation(6, 0, 0))

    def test_rotated_correction(self):
        s = CorrectionState(RigidTransform.from_yaw(math.pi / 2))
        out = predict_pose(s, RigidTransform.from_translation(1, 0, 0))
        assert out.translation == pytest.approx((0, 1, 0)) and out.yaw == pytest.approx(math.pi / 2)

    def test_fixed_point(self):
        s = CorrectionState(RigidTransform.from_xyz_rpy(1, 2, 0, 0.01, 0.02, 0.3))
        odom = RigidTransform.from_yaw(-0.2, 4, 1)
        new = update_correction(s, predict_pose(s, odom), odom)
        assert new.map_from_odom.allclose(s.map_from_odom, 1e-9)

    def test_hand_example(self):
        new = update_correction(CorrectionState(RigidTransform.identity()),
                                RigidTransform.from_translation(1.2, 0.1, 0), RigidTransform.from_translation(1, 0, 0))
        assert new.map_from_odom.allclose(RigidTransform.from_translation(0.2, 0.1, 0), 1e-12)

    def test_identity_odometry(self):
        R = RigidTransform.from_yaw(0.7, 3, 3)
        new = update_correction(CorrectionState(RigidTransform.identity()), R, RigidTransform.identity())
        assert new.map_from_odom.allclose(R, 1e-12)

    def test_initial_pose(self):
        odom = RigidTransform.from_yaw(0.1, 0.5, 0)
        start = RigidTransform.from_yaw(1.0, 6, 8)
        s = CorrectionState.from_initial_pose(start, odom)
        assert predict_pose(s, odom).allclose(start, 1e-12)

    @settings(max_examples=300, deadline=None)
    @given(transforms(), transforms(), transforms())
    def test_update_then_predict_reproduces_refined(self, c, refined, odom):
        new = update_correction(CorrectionState(c), refined, odom)
        assert predict_pose(new, odom).allclose(refined, 1e-9)


class TestPoseStream:
    def odom(self, n):
        return [(0.1 * k, RigidTransform.from_translation(0.1 * k, 0, 0)) for k in range(n)]

    def test_constant_shift(self):
        c = RigidTransform.from_translation(2, 3, 0)
        out = list(corrected_pose_stream(CorrectionState(c), self.odom(5)))
        for (t, o), (t2, m) in zip(self.odom(5), out):
            assert t == t2 and m.allclose(compose(c, o))

    def test_update_mid_stream(self):
        a, b = RigidTransform.identity(), RigidTransform.from_yaw(0.1, 0.2, -0.1)
        items = self.odom(3) + [CorrectionState(b)] + self.odom(6)[3:]
        out = [m for _, m in corrected_pose_stream(CorrectionState(a), items)]
        assert len(out) == 6
        assert all(np.all(np.isfinite(m.as_list())) for m in out)
        assert out[2].allclose(self.odom(3)[2][1]) and out[3].allclose(compose(b, self.odom(6)[3][1]))

    def test_jump_equals_correction_delta(self):
        o = RigidTransform.from_yaw(0.3, 4, 1)
        a, b = RigidTransform.from_translation(1, 0, 0), RigidTransform.from_translation(1.05, -0.02, 0)
        out = [m for _, m in corrected_pose_stream(CorrectionState(a), [(0.0, o), CorrectionState(b), (0.1, o)])]
        jump = compose(out[1], inverse(out[0]))
        assert jump.allclose(compose(b, inverse(a)), 1e-12)

    def test_holder_swap(self):
        h = CorrectionHolder(CorrectionState(RigidTransform.identity()))
        gen = corrected_pose_stream(h, iter(self.odom(2)))
        first = next(gen)[1]
        h.set(CorrectionState(RigidTransform.from_translation(0, 1, 0)))
        second = next(gen)[1]
        assert first.translation == (0, 0, 0) and second.translation == pytest.approx((0.1, 1, 0))
