"""Compiled kernels against the numpy fallback on mine-sized workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each workload runs through the public API with the backend swapped in
``minenav.kernels``; outputs are compared so a speedup never hides a
divergence.
"""
from __future__ import annotations

import argparse
import contextlib
import math
import statistics
import time

import numpy as np

from minenav import _kernels_py, kernels
from minenav.geometry import RigidTransform
from minenav.localization import build_ndt_grid, ndt_align
from minenav.mission import prior_graph
from minenav.planner.visgraph import plan
from minenav.sim.lidar import cast_scan
from minenav.sim.scenarios import mine_spec
from minenav.sim.survey import survey_map
from minenav.sim.world import WorldSpec, generate_world

NAMES = ("cast_rays", "ndt_derivatives", "segments_visible", "points_inside")


def backends() -> dict:
    out = {"python": _kernels_py}
    try:
        from minenav import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out


@contextlib.contextmanager
def use(impl):
    saved = {n: getattr(kernels, n) for n in NAMES}
    try:
        for n in NAMES:
            setattr(kernels, n, getattr(impl, n))
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def timed(fn, repeat: int):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    spec = WorldSpec.from_dict(mine_spec())
    world = generate_world(spec)
    cloud = survey_map(world, spec)
    grid = build_ndt_grid(cloud)
    pose = RigidTransform.from_yaw(0.0, 22.0, 8.0, world.floor_at(22.0, 8.0) + 0.5)
    scan = cast_scan(world, pose)
    guess = RigidTransform.from_yaw(math.radians(4.0), 22.25, 7.8, pose.translation[2])
    graph = prior_graph(cloud)
    goal = (26.0, 24.0)

    workloads = {
        "cast_scan (1 scan)": lambda: cast_scan(world, pose).xyz,
        "ndt_align (0.3 m / 4 deg)": lambda: np.array(ndt_align(grid, scan, guess).pose.matrix()),
        "graph build (prior map)": lambda: prior_graph(cloud).edges,
        "plan (mine, 30 m)": lambda: plan(graph, (6.0, 8.0), goal).cost,
    }
    impls = backends()
    print(f"default backend: {kernels.BACKEND}; repeats: {args.repeat}\n")
    print(f"{'workload':28s}" + "".join(f"{n:>12s}" for n in impls) + "     speedup")
    for name, fn in workloads.items():
        row, outs = [], []
        for impl in impls.values():
            with use(impl):
                t, out = timed(fn, args.repeat)
            row.append(t)
            outs.append(np.asarray(out, dtype=np.float64))
        agree = all(o.shape == outs[0].shape and np.allclose(o, outs[0], atol=1e-9) for o in outs)
        speed = f"{row[0] / row[-1]:8.1f}x" if len(row) > 1 else "       -"
        print(f"{name:28s}" + "".join(f"{t * 1e3:10.1f}ms" for t in row) + speed
              + ("" if agree else "   OUTPUTS DIFFER"))


if __name__ == "__main__":
    main()
