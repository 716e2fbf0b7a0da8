import csv
import io
import json
import logging
import xml.etree.ElementTree as ET

import pytest

from minenav.cli import EXIT_BAD_INPUT, EXIT_OK, EXIT_TRIAL_FAILED, main, read_records
from minenav.pcd import read_pcd
from minenav.planner.visgraph import load_graph
from minenav.sim.scenarios import straight_corridor_spec

SVG = "{http://www.w3.org/2000/svg}"


def corridor_spec(length=12.0):
    spec = straight_corridor_spec(length)
    x0, y, _ = spec["poses"]["start"]
    for d in (2, 3, 4, 5):
        spec["poses"][f"g{d}"] = [x0 + d, y, 0.0]
    return spec


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """map + graph for a short corridor, with a four-goal table."""
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps(corridor_spec()))
    assert main(["map", str(spec), "--out", str(root / "w")]) == EXIT_OK
    cfg_path = root / "w" / "run.json"
    cfg = json.loads(cfg_path.read_text())
    cfg["goals"] = [{"name": f"G{k}", "goal": f"g{d}", "starts": ["start"]} for k, d in enumerate((2, 3, 4, 5), 1)]
    cfg_path.write_text(json.dumps(cfg))
    assert main(["graph", "--config", str(cfg_path)]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def full_run(workspace):
    out = workspace / "run-all"
    rc = main(["run", "--config", str(workspace / "w" / "run.json"), "--out", str(out), "--seed", "0", "1", "2", "3", "4"])
    return rc, out


@pytest.fixture(scope="module")
def single_run(workspace):
    out = workspace / "one"
    rc = main(["run", "--config", str(workspace / "w" / "run.json"), "--out", str(out), "--goal", "G1", "--seed", "0"])
    return rc, out


class TestMap:
    def test_files_written(self, workspace):
        w = workspace / "w"
        assert {"world.json", "map.pcd", "run.json", "graph.json"} <= {p.name for p in w.iterdir()}
        cloud = read_pcd(w / "map.pcd")
        assert len(cloud) > 1000
        xyz = cloud.xyz
        assert xyz[:, 0].min() < 3.0 and xyz[:, 0].max() > 13.0

    def test_refuses_overwrite(self, workspace, capsys):
        spec = workspace / "spec.json"
        assert main(["map", str(spec), "--out", str(workspace / "w")]) == EXIT_BAD_INPUT
        assert "--force" in capsys.readouterr().err

    def test_disconnected_spec(self, tmp_path, capsys):
        spec = straight_corridor_spec(20.0)
        spec["corridors"].append({"name": "island", "points": [[4.0, 1.2], [8.0, 1.2]], "width": 0.4})
        spec["size"][1] = 7.0
        (tmp_path / "s.json").write_text(json.dumps(spec))
        assert main(["map", str(tmp_path / "s.json"), "--out", str(tmp_path / "o")]) == EXIT_BAD_INPUT
        assert "disconnected" in capsys.readouterr().err
        assert not (tmp_path / "o" / "world.json").exists()

    def test_invalid_spec(self, tmp_path, capsys):
        (tmp_path / "s.json").write_text('{"name": "x"}')
        assert main(["map", str(tmp_path / "s.json"), "--out", str(tmp_path / "o")]) == EXIT_BAD_INPUT
        assert "error" in capsys.readouterr().err


class TestGraph:
    def test_round_trip(self, workspace):
        g = load_graph(workspace / "w" / "graph.json")
        assert g.n_nodes > 0 and g.n_edges > 0

    def test_rebuild_is_byte_identical(self, workspace):
        cfg = str(workspace / "w" / "run.json")
        out = workspace / "again.json"
        assert main(["graph", "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert out.read_bytes() == (workspace / "w" / "graph.json").read_bytes()
        assert main(["graph", "--config", cfg, "--out", str(out)]) == EXIT_BAD_INPUT
        assert main(["graph", "--config", cfg, "--out", str(out), "--force"]) == EXIT_OK
        assert out.read_bytes() == (workspace / "w" / "graph.json").read_bytes()

    def test_empty_map(self, tmp_path, caplog):
        (tmp_path / "map.pcd").write_text(
            "VERSION .7\nFIELDS x y z intensity\nSIZE 8 8 8 8\nTYPE F F F F\nCOUNT 1 1 1 1\n"
            "WIDTH 0\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 0\nDATA ascii\n")
        (tmp_path / "run.json").write_text(json.dumps({"world": "world.json", "map": "map.pcd"}))
        with caplog.at_level(logging.WARNING, logger="minenav"):
            assert main(["graph", "--config", str(tmp_path / "run.json")]) == EXIT_OK
        assert "empty" in caplog.text
        g = load_graph(tmp_path / "graph.json")
        assert g.n_nodes == 0 and g.n_edges == 0

    def test_missing_config(self, tmp_path):
        assert main(["graph", "--config", str(tmp_path / "nope.json")]) == EXIT_BAD_INPUT


class TestRun:
    def test_single_trial(self, single_run):
        rc, out = single_run
        assert rc == EXIT_OK
        lines = (out / "records.jsonl").read_text().splitlines()
        assert len(lines) == 1 and json.loads(lines[0])["success"] is True
        assert len(list((out / "trials").iterdir())) == 1

    def test_full_table(self, full_run):
        rc, out = full_run
        assert rc == EXIT_OK
        records = read_records(out / "records.jsonl")
        assert len(records) == 20 and all(r.success for r in records)
        rows = list(csv.reader(io.StringIO((out / "summary.csv").read_text())))
        assert [r[0] for r in rows[1:]] == ["G1", "G2", "G3", "G4", "All"]
        assert rows[-1][1] == "20/20"
        wall = json.loads((out / "wall_clock.json").read_text())
        assert len(wall) == 20 and "driver" in wall[0]["stages_ms"]

    def test_refuses_existing_records(self, workspace, full_run):
        _, out = full_run
        rc = main(["run", "--config", str(workspace / "w" / "run.json"), "--out", str(out), "--goal", "G1"])
        assert rc == EXIT_BAD_INPUT

    def test_timeout_exits_nonzero(self, workspace):
        out = workspace / "timeout"
        rc = main(["run", "--config", str(workspace / "w" / "run.json"), "--out", str(out),
                   "--goal", "G4", "--seed", "0", "--timeout-s", "2"])
        assert rc == EXIT_TRIAL_FAILED
        (rec,) = read_records(out / "records.jsonl")
        assert not rec.success and rec.timed_out

    def test_world_pose_as_goal(self, workspace):
        out = workspace / "pose"
        rc = main(["run", "--config", str(workspace / "w" / "run.json"), "--out", str(out),
                   "--goal", "g3", "--start", "start", "--seed", "0"])
        assert rc == EXIT_OK

    def test_unknown_goal(self, workspace, capsys):
        rc = main(["run", "--config", str(workspace / "w" / "run.json"), "--out", str(workspace / "x"),
                   "--goal", "nowhere"])
        assert rc == EXIT_BAD_INPUT and "nowhere" in capsys.readouterr().err

    def test_parallel_run_same_records(self, workspace, full_run):
        _, serial = full_run
        out = workspace / "par"
        rc = main(["run", "--config", str(workspace / "w" / "run.json"), "--out", str(out),
                   "--seed", "0", "1", "2", "3", "4", "--parallel", "2"])
        assert rc == EXIT_OK
        assert (out / "records.jsonl").read_bytes() == (serial / "records.jsonl").read_bytes()


class TestEval:
    def test_summary(self, full_run, capsys, tmp_path):
        _, out = full_run
        assert main(["eval", str(out / "records.jsonl"), "--out", str(tmp_path / "s.csv")]) == EXIT_OK
        text = capsys.readouterr().out
        assert "SPL" in text and "end-to-end latency" in text
        assert (tmp_path / "s.csv").read_text() == (out / "summary.csv").read_text()

    def test_bad_records(self, tmp_path, capsys):
        (tmp_path / "r.jsonl").write_text('{"goal_name": "G1"}\n')
        assert main(["eval", str(tmp_path / "r.jsonl")]) == EXIT_BAD_INPUT
        assert "r.jsonl:1" in capsys.readouterr().err


class TestPlot:
    def test_single_trial(self, workspace, single_run, tmp_path):
        rec = single_run[1] / "records.jsonl"
        out = tmp_path / "one.svg"
        assert main(["plot", str(rec), "--config", str(workspace / "w" / "run.json"), "--out", str(out)]) == EXIT_OK
        root = ET.parse(out).getroot()
        lines = root.findall(f".//{SVG}polyline")
        assert sorted(el.get("class") for el in lines) == ["executed", "geodesic"]
        dashed = [el for el in lines if el.get("stroke-dasharray")]
        assert len(dashed) == 1 and dashed[0].get("class") == "geodesic"
        assert "p/l" in out.read_text()

    def test_grid(self, workspace, full_run, tmp_path):
        _, run = full_run
        out = tmp_path / "grid.svg"
        rc = main(["plot", str(run / "records.jsonl"), "--config", str(workspace / "w" / "run.json"),
                   "--out", str(out), "--grid"])
        assert rc == EXIT_OK
        panels = ET.parse(out).getroot().findall(f".//{SVG}g[@class='panel']")
        cells = {(int(p.get("data-row")), int(p.get("data-col"))) for p in panels}
        assert cells == {(r, c) for r in range(4) for c in range(5)}

    def test_empty_records(self, workspace, tmp_path, caplog):
        (tmp_path / "empty.jsonl").write_text("")
        out = tmp_path / "empty.svg"
        with caplog.at_level(logging.WARNING, logger="minenav"), pytest.warns(UserWarning):
            rc = main(["plot", str(tmp_path / "empty.jsonl"), "--world", str(workspace / "w" / "world.json"),
                       "--out", str(out)])
        assert rc == EXIT_OK and "outline only" in caplog.text
        root = ET.parse(out).getroot()
        assert root.findall(f".//{SVG}polyline") == [] and root.findall(f".//{SVG}path")

    def test_needs_world(self, tmp_path):
        assert main(["plot", "--out", str(tmp_path / "x.svg")]) == EXIT_BAD_INPUT
