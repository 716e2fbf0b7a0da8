"""Command-line front end.

    minenav map   [SPEC] --out DIR            world.json, map.pcd, run.json
    minenav graph --config run.json           graph.json beside the map
    minenav run   --config run.json --out DIR records.jsonl, summary.csv, wall_clock.json
    minenav eval  RECORDS.jsonl               summary table and statistics
    minenav plot  RECORDS.jsonl --config run.json --out fig.svg [--grid]

Exit status: 0 on success, 1 when any trial failed, 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .metrics import correction_stats, latency_report, spl, summary_csv
from .mission import (
    GoalSpec,
    MissionError,
    MissionResources,
    TrialRecord,
    prior_graph,
    run_suite,
    suite_configs,
)
from .pcd import PcdError, read_pcd, write_pcd
from .planner.visgraph import GraphFileError, load_graph, save_graph
from .sim.scenarios import mine_goals, mine_spec
from .sim.survey import survey_map
from .sim.world import WorldFileError, WorldMap, WorldSpec, WorldSpecError, generate_world, load_world_spec

log = logging.getLogger("minenav")

EXIT_OK, EXIT_TRIAL_FAILED, EXIT_BAD_INPUT = 0, 1, 2
RECORDS_FILE, SUMMARY_FILE, WALL_CLOCK_FILE = "records.jsonl", "summary.csv", "wall_clock.json"


class CliError(Exception):
    """Bad input or refused action; reported without a traceback."""


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _refuse_existing(paths: Sequence[Path], force: bool) -> None:
    present = [str(p) for p in paths if p.exists()]
    if present and not force:
        raise CliError(f"refusing to overwrite {', '.join(present)} (use --force)")


# --- run configuration ---------------------------------------------------------------

class RunConfig:
    """The single JSON file naming a run's inputs. Relative paths resolve
    against the file's own directory."""

    def __init__(self, path: Path, doc: dict[str, Any]):
        self.path = path
        self.doc = doc
        base = path.parent
        try:
            self.world = base / doc["world"]
            self.map = base / doc["map"]
        except KeyError as exc:
            raise CliError(f"{path}: missing key {exc}") from None
        self.graph = base / doc.get("graph", "graph.json")
        self.goals = [GoalSpec.from_dict(g) for g in doc.get("goals", [])]
        self.seeds = [int(s) for s in doc.get("seeds", [0])]
        self.timeout_s = float(doc.get("timeout_s", 300.0))
        self.stalls = {int(k): int(v) for k, v in doc.get("localization_stalls", {}).items()}

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise CliError(f"{path}: no such file") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise CliError(f"{path}: top level must be an object")
        try:
            return cls(path, doc)
        except (MissionError, TypeError, ValueError) as exc:
            raise CliError(f"{path}: {exc}") from None


# --- subcommands -------------------------------------------------------------------------

def cmd_map(args) -> int:
    if args.spec:
        spec = load_world_spec(args.spec)
        goals = []
    else:
        spec = WorldSpec.from_dict(mine_spec())
        goals = mine_goals()
    out = Path(args.out)
    files = [out / "world.json", out / "map.pcd", out / "run.json"]
    _refuse_existing(files, args.force)
    world = generate_world(spec)
    n = world.free_components()
    if n != 1:
        raise CliError(f"world has {n} disconnected free-space regions; every corridor must connect")
    cloud = survey_map(world, spec)
    out.mkdir(parents=True, exist_ok=True)
    world.save(files[0])
    write_pcd(files[1], cloud)
    run = {"world": "world.json", "map": "map.pcd", "graph": "graph.json", "goals": goals,
           "seeds": [0, 1, 2, 3, 4], "timeout_s": 300.0}
    _atomic_write(files[2], json.dumps(run, indent=1) + "\n")
    log.info("wrote %s (%d x %d cells) and %s (%d points)", files[0], world.width, world.height,
             files[1], len(cloud))
    return EXIT_OK


def cmd_graph(args) -> int:
    cfg = RunConfig.load(args.config)
    out = Path(args.out) if args.out else cfg.graph
    _refuse_existing([out], args.force)
    cloud = read_pcd(cfg.map)
    if len(cloud) == 0:
        log.warning("map cloud %s is empty: writing an empty graph", cfg.map)
    graph = prior_graph(cloud)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out)
    log.info("wrote %s (%d nodes, %d edges)", out, graph.n_nodes, len(graph.edges))
    return EXIT_OK


def _select_goals(cfg: RunConfig, world: WorldMap, names: Sequence[str] | None, start: str | None) -> list[GoalSpec]:
    table = {g.name: g for g in cfg.goals}
    if not names:
        goals = list(cfg.goals)
    else:
        goals = []
        for name in names:
            if name in table:
                goals.append(table[name])
            elif name in world.poses:
                goals.append(GoalSpec(name, name, (start or "entrance",)))
            else:
                raise CliError(f"unknown goal {name!r}: not in the goal table nor a world pose")
    if start:
        goals = [GoalSpec(g.name, g.goal, (start,)) for g in goals]
    if not goals:
        raise CliError("no goals to run: add a goal table to the config or pass --goal")
    return goals


def cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    out = Path(args.out)
    records_path = out / RECORDS_FILE
    _refuse_existing([records_path, out / SUMMARY_FILE], args.force)
    world = WorldMap.load(cfg.world)
    cloud = read_pcd(cfg.map)
    graph = load_graph(cfg.graph) if cfg.graph.exists() else None
    if graph is None:
        log.info("no graph at %s: building from the map", cfg.graph)
    goals = _select_goals(cfg, world, args.goal, args.start)
    seeds = args.seed if args.seed else cfg.seeds
    timeout = args.timeout_s if args.timeout_s is not None else cfg.timeout_s
    try:
        configs = suite_configs(world, goals, seeds, timeout_s=timeout, localization_stalls=cfg.stalls)
    except MissionError as exc:
        raise CliError(str(exc)) from None
    res = MissionResources.build(world, cloud, graph)
    trial_dir = out / "trials"
    trial_dir.mkdir(parents=True, exist_ok=True)

    def done(i: int, rec: TrialRecord) -> None:
        _atomic_write(trial_dir / f"{i:03d}-{rec.goal_name}-s{rec.seed}.json", rec.to_json() + "\n")
        log.info("%s seed %d: %s p=%.2f l=%.2f t=%.1fs%s", rec.goal_name, rec.seed,
                 "success" if rec.success else "FAIL", rec.path_length, rec.geodesic, rec.elapsed,
                 f" ({rec.reason})" if rec.reason else "")

    records = run_suite(configs, res, parallel=args.parallel, on_record=done)
    _atomic_write(records_path, "".join(r.to_json() + "\n" for r in records))
    _atomic_write(out / SUMMARY_FILE, summary_csv(records))
    # real compute time is machine-dependent, so it stays out of the records
    wall = [{"goal_name": r.goal_name, "seed": r.seed, "stages_ms": r.wall_clock} for r in records]
    _atomic_write(out / WALL_CLOCK_FILE, json.dumps(wall) + "\n")
    ok = sum(r.success for r in records)
    print(summary_csv(records), end="")
    print(f"success {ok}/{len(records)}  SPL {spl(records):.3f}")
    return EXIT_OK if ok == len(records) else EXIT_TRIAL_FAILED


def read_records(path: str | os.PathLike) -> list[TrialRecord]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(TrialRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                raise CliError(f"{path}:{lineno}: {exc}") from None
    return out


def cmd_eval(args) -> int:
    records = read_records(args.records)
    if not records:
        raise CliError(f"{args.records}: no records")
    text = summary_csv(records)
    if args.out:
        out = Path(args.out)
        _refuse_existing([out], args.force)
        _atomic_write(out, text)
    print(text, end="")
    print(f"SPL {spl(records):.3f}  success {sum(r.success for r in records)}/{len(records)}")
    traces = [t for r in records for t in r.latency]
    if traces:
        rep = latency_report(traces)
        e2e = rep["end_to_end"]
        print(f"end-to-end latency ms: median {e2e['median']:.0f}  mean {e2e['mean']:.0f}  p95 {e2e['p95']:.0f}")
    for r in records:
        if len(r.corrections) > 1:
            step, drift = correction_stats(r)
            odo = "n/a" if r.odom_only_error is None or math.isnan(r.odom_only_error) else f"{r.odom_only_error:.2f}"
            print(f"{r.goal_name} s{r.seed}: median correction step {step * 100:.1f} cm, "
                  f"max drift {drift:.2f} m, odometry-only error {odo} m")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .svgplot import write_svg

    records = read_records(args.records) if args.records else []
    if args.config:
        world = WorldMap.load(RunConfig.load(args.config).world)
    elif args.world:
        world = WorldMap.load(args.world)
    else:
        raise CliError("plot needs --config or --world")
    out = Path(args.out)
    _refuse_existing([out], args.force)
    if not records:
        log.warning("no records: the figure shows the world outline only")
    write_svg(out, records, world, grid=args.grid)
    log.info("wrote %s", out)
    return EXIT_OK


# --- entry point -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minenav", description="Simulated underground-mine navigation runs.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("map", help="generate a world and its prior-map cloud")
    m.add_argument("spec", nargs="?", help="world spec JSON (default: built-in synthetic mine)")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--force", action="store_true")
    m.set_defaults(func=cmd_map)

    g = sub.add_parser("graph", help="pre-compute the visibility graph of the prior map")
    g.add_argument("--config", required=True)
    g.add_argument("--out", help="graph file (default: the config's graph path)")
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_graph)

    r = sub.add_parser("run", help="run every (goal, seed) trial")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--goal", action="append", help="goal name from the table or a world pose (repeatable)")
    r.add_argument("--start", help="start pose name overriding the goal table")
    r.add_argument("--seed", type=int, nargs="+", help="seeds (default: from the config)")
    r.add_argument("--timeout-s", type=float, dest="timeout_s")
    r.add_argument("--parallel", type=int, default=1, metavar="N")
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="summarise a records file")
    e.add_argument("records")
    e.add_argument("--out", help="also write the summary CSV here")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="draw trials as SVG")
    pl.add_argument("records", nargs="?")
    pl.add_argument("--config")
    pl.add_argument("--world")
    pl.add_argument("--out", required=True)
    pl.add_argument("--grid", action="store_true", help="one panel per trial, one row per goal")
    pl.add_argument("--force", action="store_true")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "parallel", 1) < 1:
        print("minenav: error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_BAD_INPUT
    try:
        return args.func(args)
    except (CliError, WorldSpecError, WorldFileError, PcdError, GraphFileError, MissionError,
            FileNotFoundError) as exc:
        print(f"minenav {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
