import csv
import io
import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minenav.metrics import (
    GeodesicError,
    MetricsError,
    correction_stats,
    geodesic_distance,
    geodesic_path,
    latency_report,
    path_length,
    spl,
    summary_csv,
    summary_rows,
)
from minenav.sim.scenarios import l_corridor_spec, straight_corridor_spec
from minenav.sim.world import generate_world

STAGES = ("driver", "odometry", "terrain", "planner", "controller")


class TestSpl:
    def test_optimal(self):
        assert spl([(True, 10.0, 10.0)]) == 1.0

    def test_failure(self):
        assert spl([(False, 10.0, 10.0)]) == 0.0

    def test_formula(self):
        assert spl([(True, 11.2, 13.0)]) == pytest.approx(0.8615, abs=1e-4)

    def test_matches_inverse_ratio(self):
        assert spl([(True, 1.0, 1.16)]) == pytest.approx(1 / 1.16, abs=1e-12)

    def test_shorter_than_geodesic_caps_at_one(self):
        assert spl([(True, 10.0, 9.5)]) == 1.0

    def test_empty(self):
        with pytest.raises(MetricsError):
            spl([])

    def test_zero_geodesic(self):
        with pytest.raises(MetricsError):
            spl([(True, 0.0, 1.0)])

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.booleans(), st.floats(0.1, 100), st.floats(0, 300)), min_size=1, max_size=30))
    def test_bounds(self, recs):
        assert 0.0 <= spl(recs) <= 1.0

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.booleans(), st.floats(0.1, 100)), min_size=1, max_size=30))
    def test_equals_success_rate_when_optimal(self, recs):
        s = spl([(ok, ell, ell) for ok, ell in recs])
        assert s == pytest.approx(sum(ok for ok, _ in recs) / len(recs), abs=1e-12)


class TestPathLength:
    def test_single_pose(self):
        assert path_length([[0.0, 1.0, 2.0]]) == 0.0

    def test_straight(self):
        assert path_length([[float(k), 0.0] for k in range(10)]) == 9.0

    def test_quarter_circle(self):
        a = np.radians(np.arange(0, 91))
        assert path_length(np.column_stack([2 * np.cos(a), 2 * np.sin(a)])) == pytest.approx(math.pi, rel=1e-3)

    def test_ignores_z(self):
        assert path_length([[0, 0, 0], [3, 4, 10]]) == 5.0

    def test_empty(self):
        with pytest.raises(MetricsError):
            path_length(np.zeros((0, 2)))


class TestGeodesic:
    def test_same_point(self):
        w = generate_world(straight_corridor_spec(20.0))
        assert geodesic_distance(w, (5.0, 3.5), (5.0, 3.5), 1.0) == 0.0

    def test_straight_corridor(self):
        w = generate_world(straight_corridor_spec(23.0))
        s, g = w.poses["start"], w.poses["goal"]
        assert g.x - s.x == pytest.approx(20.0)
        assert geodesic_distance(w, (s.x, s.y), (g.x, g.y), 1.0) == pytest.approx(20.0, rel=0.02)

    def test_l_corner(self):
        w = generate_world(l_corridor_spec())
        s, g, corner, r = np.array([4.0, 3.0]), np.array([16.0, 15.0]), np.array([14.5, 4.5]), 1.0
        # taut string: two tangents to the clearance circle around the inner corner plus the arc between
        a, b = s - corner, g - corner
        da, db = np.linalg.norm(a), np.linalg.norm(b)
        swept = 2 * math.pi - math.acos(a @ b / (da * db))
        arc = swept - math.acos(r / da) - math.acos(r / db)
        analytic = math.sqrt(da ** 2 - r ** 2) + math.sqrt(db ** 2 - r ** 2) + r * arc
        assert geodesic_distance(w, s, g, r) == pytest.approx(analytic, rel=0.03)

    def test_path_respects_clearance(self):
        w = generate_world(l_corridor_spec())
        _, pts = geodesic_path(w, (4.0, 3.0), (16.0, 15.0), 1.0)
        assert min(w.clearance_at(x, y) for x, y in pts) >= 1.0

    def test_start_in_wall(self):
        w = generate_world(straight_corridor_spec(20.0))
        with pytest.raises(GeodesicError, match="start"):
            geodesic_distance(w, (0.5, 0.5), (10.0, 3.5), 1.0)

    def test_unreachable(self):
        spec = straight_corridor_spec(20.0)
        spec["corridors"].append({"name": "island", "points": [[4.0, 1.2], [16.0, 1.2]], "width": 0.4})
        spec["size"][1] = 9.0
        spec["corridors"][0]["points"] = [[2.0, 5.5, 0.0], [22.0, 5.5, 0.0]]
        spec["poses"] = {}
        w = generate_world(spec)
        with pytest.raises(GeodesicError):
            geodesic_distance(w, (5.0, 5.5), (10.0, 1.2), 0.1)


def trace(scan, per_stage=10, skip=()):
    t, stages = scan, {}
    for name in STAGES:
        if name in skip:
            continue
        stages[name] = [t, t + per_stage]
        t += per_stage
    return {"scan_stamp": scan, "command_stamp": t, "stages": stages}


class TestLatency:
    def test_constant_stages(self):
        rep = latency_report([trace(100 * k) for k in range(20)])
        assert rep["end_to_end"]["median"] == 50.0
        assert set(rep["stages"]) == set(STAGES)
        assert all(s["median"] == 10.0 for s in rep["stages"].values())

    def test_localization_outlier_excluded(self):
        loc = [100.0] * 99 + [1000.0]
        rep = latency_report([trace(100 * k) for k in range(100)], loc)
        assert rep["end_to_end"]["median"] == 50.0
        assert rep["localization"]["median"] == 100.0 and rep["localization"]["mean"] == 109.0

    def test_missing_stage(self):
        rep = latency_report([trace(0, skip=("terrain",)), trace(100)])
        assert rep["stages"]["terrain"]["n"] == 1 and rep["stages"]["driver"]["n"] == 2

    def test_empty(self):
        with pytest.raises(MetricsError):
            latency_report([])


class TestCorrections:
    def test_constant(self):
        assert correction_stats([[1.0, 2.0]] * 10) == (0.0, 0.0)

    def test_scripted_steps(self):
        steps = [0.01, 0.01, 0.03]
        c = np.cumsum([[0.0, 0.0]] + [[s, 0.0] for s in steps], axis=0)
        med, drift = correction_stats(c)
        assert med == pytest.approx(0.01) and drift == pytest.approx(0.05)

    def test_drift_is_from_first_sample(self):
        med, drift = correction_stats([[5, 5], [5.3, 5.4], [5.0, 5.1]])
        assert drift == pytest.approx(0.5)

    def test_record_input(self):
        assert correction_stats(SimpleNamespace(corrections=[[0, 0], [0, 0.2]])) == pytest.approx((0.2, 0.2))

    def test_empty(self):
        with pytest.raises(MetricsError):
            correction_stats([])


def rec(goal, ok, ell, p, t):
    return SimpleNamespace(goal_name=goal, success=ok, geodesic=ell, path_length=p, elapsed=t)


class TestSummary:
    records = [rec("G1", True, 10.0, 11.0, 30.0), rec("G1", True, 10.0, 13.0, 40.0),
               rec("G2", True, 20.0, 20.0, 60.0), rec("G2", False, 20.0, 5.0, 300.0)]

    def test_rows(self):
        rows = {r["goal"]: r for r in summary_rows(self.records)}
        assert rows["G1"]["success"] == 2 and rows["G2"]["success"] == 1
        assert rows["G1"]["ratio_mean"] == pytest.approx(1.2)
        assert rows["G1"]["spl_mean"] == pytest.approx((10 / 11 + 10 / 13) / 2)
        assert rows["G2"]["spl_mean"] == pytest.approx(0.5)
        assert rows["All"]["trials"] == 4
        assert rows["All"]["spl_mean"] == pytest.approx((rows["G1"]["spl_mean"] + 0.5) / 2)

    def test_csv_layout(self):
        rows = list(csv.reader(io.StringIO(summary_csv(self.records))))
        assert rows[0] == ["Goal", "Succ.", "Path (m)", "p/l", "SPL", "Time (s)"]
        assert [r[0] for r in rows[1:]] == ["G1", "G2", "All"]
        assert rows[1][1] == "2/2" and rows[1][2] == "12.0 ± 1.4"
        assert rows[3][1] == "3/4"
