import math

import numpy as np
import pytest

from minenav import kernels
from minenav.geometry import RigidTransform, project_se2
from minenav.sim.lidar import EmbeddedError, LidarConfig, cast_scan
from minenav.sim.motion import DriftingOdometry, OdometryModel, RobotLimits, RobotState, odom_pose, step_motion
from minenav.sim.scenarios import straight_corridor_spec, t_junction_spec
from minenav.sim.survey import survey_map
from minenav.sim.world import WorldFileError, WorldMap, WorldSpec, WorldSpecError, generate_world


def room(size=10.0, res=0.1, height=3.0):
    n = int(round(size / res)) + 2
    occ = np.ones((n, n), dtype=np.uint8)
    occ[1:-1, 1:-1] = 0
    return WorldMap(res, occ, np.zeros((n, n)), np.full((n, n), height))


class TestGenerateWorld:
    def test_straight_corridor_extent(self):
        w = generate_world(straight_corridor_spec(20.0, 3.0))
        rows, cols = np.nonzero(w.occupancy == 0)
        assert (cols.max() - cols.min() + 1) * w.resolution == pytest.approx(20.0, abs=w.resolution)
        assert (rows.max() - rows.min() + 1) * w.resolution == pytest.approx(3.0, abs=w.resolution)

    def test_t_junction_single_region(self):
        w = generate_world(t_junction_spec())
        assert w.free_components() == 1

    def test_closed_boundary(self):
        w = generate_world(t_junction_spec())
        occ = w.occupancy
        assert occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()

    def test_ceiling_above_floor(self, mine_world):
        free = mine_world.occupancy == 0
        assert np.all(mine_world.ceiling_z[free] > mine_world.floor_z[free])

    def test_ramp_gradient(self):
        w = generate_world(straight_corridor_spec(35.0, 3.0, ramp=0.3))
        free = w.occupancy == 0
        gy, gx = np.gradient(w.floor_z, w.resolution)
        inner = free & np.roll(free, 1, 0) & np.roll(free, -1, 0) & np.roll(free, 1, 1) & np.roll(free, -1, 1)
        g = np.hypot(gx, gy)[inner].max()
        assert g == pytest.approx(0.3 / 35.0, rel=0.02)
        assert g < 0.02        # far below the ground filter's slope tolerance

    def test_rejects_corridor_outside_grid(self):
        spec = straight_corridor_spec(10.0)
        spec["corridors"][0]["points"][1][0] = 30.0
        with pytest.raises(WorldSpecError, match="exits the grid"):
            generate_world(spec)

    def test_rejects_pose_in_rock(self):
        spec = straight_corridor_spec(10.0)
        spec["poses"]["bad"] = [0.5, 0.5, 0.0]
        with pytest.raises(WorldSpecError, match="bad"):
            generate_world(spec)

    def test_disconnected_spec_has_two_regions(self):
        spec = straight_corridor_spec(20.0)
        spec["corridors"].append({"name": "island", "points": [[4.0, 1.2], [8.0, 1.2]], "width": 0.4})
        spec["size"][1] = 7.0
        w = generate_world(spec)
        assert w.free_components() == 2

    def test_mine_size(self, mine_world):
        ox, oy, ex, ey = mine_world.extent
        assert (ex - ox, ey - oy) == (60.0, 30.0)
        assert mine_world.free_components() == 1

    def test_file_round_trip(self, tmp_path):
        w = generate_world(t_junction_spec())
        w.save(tmp_path / "w.json")
        back = WorldMap.load(tmp_path / "w.json")
        assert np.array_equal(back.occupancy, w.occupancy)
        assert np.allclose(back.floor_z, w.floor_z, atol=1e-6)
        assert back.poses == w.poses

    def test_bad_world_file(self, tmp_path):
        (tmp_path / "w.json").write_text('{"resolution": 0.1, "width": 2}')
        with pytest.raises(WorldFileError, match="height"):
            WorldMap.load(tmp_path / "w.json")

    def test_spec_round_trip(self):
        spec = WorldSpec.from_dict(t_junction_spec())
        assert WorldSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()


class TestCastScan:
    def test_room_axis_ranges(self):
        w = room()
        cfg = LidarConfig(channels=1, fov_min_deg=0.0, fov_max_deg=0.0, horizontal_rays=4)
        scan = cast_scan(w, RigidTransform.from_translation(5.1, 5.1, 1.0), cfg)
        assert np.allclose(np.linalg.norm(scan.xyz, axis=1), 5.0, atol=1e-9)

    def test_floor_hit_distance(self):
        w = room()
        cfg = LidarConfig(channels=1, fov_min_deg=-15.0, fov_max_deg=-15.0, horizontal_rays=8)
        scan, kinds = cast_scan(w, RigidTransform.from_translation(5.1, 5.1, 0.5), cfg, return_kinds=True)
        assert np.all(kinds == kernels.HIT_FLOOR)
        assert np.allclose(np.hypot(scan.xyz[:, 0], scan.xyz[:, 1]), 0.5 / math.tan(math.radians(15)), atol=1e-9)

    def test_embedded(self):
        with pytest.raises(EmbeddedError, match="embedded"):
            cast_scan(room(), RigidTransform.from_translation(0.05, 0.05, 1.0))

    def test_range_window_and_intensity(self, mine_world):
        p = mine_world.poses["entrance"]
        scan = cast_scan(mine_world, p.to_transform(mine_world.floor_at(p.x, p.y) + 0.5))
        r = np.linalg.norm(scan.xyz, axis=1)
        assert r.min() >= 0.75 and r.max() < 30.0
        assert np.all(scan.intensity == 0) and scan.frame_id == "body"

    @pytest.mark.parametrize("name", ["entrance", "G2", "G3", "G4-start-5"])
    def test_returns_lie_on_surfaces(self, mine_world, name):
        w = mine_world
        p = w.poses[name]
        pose = RigidTransform.from_yaw(p.yaw + 0.3, p.x, p.y, w.floor_at(p.x, p.y) + 0.5)
        scan, kinds = cast_scan(w, pose, return_kinds=True)
        pts = pose.apply(scan.xyz)
        assert np.any(kinds == kernels.HIT_FLOOR)
        dirs = pts - np.array(pose.translation)
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        tol = w.resolution / math.sqrt(2)
        for q, d, k in zip(pts[::7], dirs[::7], kinds[::7]):
            if k == kernels.HIT_WALL:
                ahead = q + 1e-6 * d
                assert not w.is_free(ahead[0], ahead[1])
            elif k == kernels.HIT_FLOOR:
                assert abs(q[2] - w.floor_at(q[0], q[1])) <= tol
            else:
                i, j = w.cell_of(q[0], q[1])
                assert abs(q[2] - w.ceiling_z[i, j]) <= tol

    def test_deterministic(self, mine_world):
        p = mine_world.poses["G1"].to_transform(0.5)
        a = cast_scan(mine_world, p)
        b = cast_scan(mine_world, p)
        assert np.array_equal(a.points, b.points)


class TestStepMotion:
    def start(self):
        return RobotState(RigidTransform.identity())

    def test_straight(self):
        s = step_motion(self.start(), (0.5, 0.0), 2.0)
        assert s.true_pose.translation == pytest.approx((1.0, 0.0, 0.0))

    def test_turn_in_place(self):
        s = step_motion(self.start(), (0.0, math.pi / 2), 1.0, limits=RobotLimits(w_max=2.0))
        p = project_se2(s.true_pose)
        assert (p.x, p.y) == pytest.approx((0, 0)) and p.yaw == pytest.approx(math.pi / 2)

    def test_quarter_circle(self):
        # radius v / w = 1, swept angle w * dt = pi / 2
        s = step_motion(self.start(), (0.5, 0.5), math.pi)
        assert s.true_pose.translation[:2] == pytest.approx((1.0, 1.0), abs=1e-12)

    def test_half_circle(self):
        s = step_motion(self.start(), (0.5, 0.5), 2 * math.pi)
        assert s.true_pose.translation[:2] == pytest.approx((0.0, 2.0), abs=1e-12)
        assert project_se2(s.true_pose).yaw == pytest.approx(math.pi)

    def test_speed_clamped(self):
        s = step_motion(self.start(), (3.0, 0.0), 1.0)
        assert s.v == 0.5 and s.true_pose.translation[0] == pytest.approx(0.5)

    def test_wall_contact(self):
        w = room(4.0)
        s = RobotState(RigidTransform.from_translation(3.6, 2.0, 0.5))
        out = step_motion(s, (0.5, 0.0), 0.5, w)
        assert out.contact and out.true_pose == s.true_pose

    def test_follows_floor(self):
        w = generate_world(straight_corridor_spec(20.0, ramp=1.0))
        s = RobotState(RigidTransform.from_translation(5.0, 3.5, 0.5))
        out = step_motion(s, (0.5, 0.0), 2.0, w)
        assert out.true_pose.translation[2] == pytest.approx(w.floor_at(6.0, 3.5) + 0.5)


def straight_run(length, step=0.05):
    n = int(round(length / step))
    return [RigidTransform.from_translation(k * step, 0, 0) for k in range(n + 1)]


class TestOdometry:
    def test_exact_without_drift(self):
        model = OdometryModel((0, 0, 0), 0.0, 0.0, 0.0)
        start = RigidTransform.from_yaw(0.7, 3, 4, 0.5)
        truth = [start @ RigidTransform.from_yaw(0.01 * k, 0.1 * k, 0.02 * k) for k in range(50)]
        for t, o in zip(truth, odom_pose(model, truth)):
            assert o.allclose(start.inverse() @ t, 1e-9)

    def test_linear_bias(self):
        model = OdometryModel((0.02, 0, 0), 0.0, 0.0, 0.0)
        final = list(odom_pose(model, straight_run(35.0)))[-1]
        assert final.translation[0] - 35.0 == pytest.approx(0.70, abs=1e-9)

    def test_default_drift_exceeds_one_metre(self):
        final = list(odom_pose(OdometryModel(seed=0), straight_run(35.0)))[-1]
        assert math.hypot(final.translation[0] - 35.0, final.translation[1]) > 1.0

    def test_seeded(self):
        a = list(odom_pose(OdometryModel(seed=4), straight_run(5.0)))
        b = list(odom_pose(OdometryModel(seed=4), straight_run(5.0)))
        c = list(odom_pose(OdometryModel(seed=5), straight_run(5.0)))
        assert a == b and a != c

    def test_standing_still_does_not_drift(self):
        odo = DriftingOdometry(OdometryModel(seed=1))
        p = RigidTransform.from_yaw(0.3, 1, 2)
        for _ in range(100):
            out = odo.update(p)
        assert out.allclose(RigidTransform.identity(), 0.0)


def test_survey_map_size(mine_map):
    assert 0 < len(mine_map) < 5e5
    assert mine_map.frame_id == "map"


def test_survey_covers_corridor():
    spec = WorldSpec.from_dict(straight_corridor_spec(10.0))
    cloud = survey_map(generate_world(spec), spec)
    xyz = cloud.xyz
    # both side walls and the floor show up along the whole corridor
    y0 = 3.5
    assert np.any(np.abs(xyz[:, 1] - (y0 + 1.5)) < 0.1) and np.any(np.abs(xyz[:, 1] - (y0 - 1.5)) < 0.1)
    assert xyz[:, 0].min() < 2.5 and xyz[:, 0].max() > 11.5
