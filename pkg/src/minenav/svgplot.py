"""Static SVG figures of trial outcomes: free-space outline, executed paths
(solid), geodesic references (dashed), start/goal markers and the p/l
ratio of each trial."""
from __future__ import annotations

import math
import os
import warnings
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .mission import TrialRecord
from .planner.raster import OccupancyImage, extract_contours
from .sim.world import WorldMap

EXECUTED_STYLE = 'fill="none" stroke="#d62728" stroke-width="1.6" stroke-linejoin="round"'
GEODESIC_STYLE = 'fill="none" stroke="#1f77b4" stroke-width="1.2" stroke-dasharray="5,3"'
OUTLINE_STYLE = 'fill="#f4f1ea" stroke="#444" stroke-width="0.8" fill-rule="evenodd"'


class _Frame:
    """Maps world metres to SVG pixels inside one panel (y axis flipped)."""

    def __init__(self, world: WorldMap, x0: float, y0: float, scale: float):
        ox, oy, ex, ey = world.extent
        self.ox, self.ey = ox, ey
        self.x0, self.y0, self.scale = x0, y0, scale

    def xy(self, x: float, y: float) -> str:
        return f"{self.x0 + (x - self.ox) * self.scale:.2f},{self.y0 + (self.ey - y) * self.scale:.2f}"

    def points(self, pts) -> str:
        return " ".join(self.xy(float(p[0]), float(p[1])) for p in pts)


def _outline_path(world: WorldMap, frame: _Frame) -> str:
    res = world.resolution
    ox, oy = world.origin
    free = OccupancyImage(world.occupancy == 0, res)
    parts = []
    for poly in extract_contours(free, tolerance=res / 2):
        for ring in poly.rings():
            coords = [(x + ox, y + oy) for x, y in ring]
            parts.append("M" + " L".join(frame.xy(x, y) for x, y in coords) + " Z")
    return f'<path d="{" ".join(parts)}" {OUTLINE_STYLE}/>'


def _marker(frame: _Frame, x: float, y: float, kind: str, size: float) -> str:
    cx, cy = (float(v) for v in frame.xy(x, y).split(","))
    if kind == "start":
        return f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{size:.2f}" fill="#2ca02c" stroke="#000" stroke-width="0.5"/>'
    s = size * 1.2
    pts = f"{cx:.2f},{cy - s:.2f} {cx + s:.2f},{cy:.2f} {cx:.2f},{cy + s:.2f} {cx - s:.2f},{cy:.2f}"
    return f'<polygon points="{pts}" fill="#ff7f0e" stroke="#000" stroke-width="0.5"/>'


def _trial_elements(rec: TrialRecord, frame: _Frame, marker_size: float, label_at: tuple[float, float],
                    font: float) -> list[str]:
    out = []
    if rec.geodesic_path:
        out.append(f'<polyline class="geodesic" points="{frame.points(rec.geodesic_path)}" {GEODESIC_STYLE}/>')
    traj = np.asarray(rec.trajectory, dtype=np.float64).reshape(-1, 4)
    if len(traj):
        out.append(f'<polyline class="executed" points="{frame.points(traj[:, 1:3])}" {EXECUTED_STYLE}/>')
    out.append(_marker(frame, rec.start[0], rec.start[1], "start", marker_size))
    out.append(_marker(frame, rec.goal[0], rec.goal[1], "goal", marker_size))
    ratio = rec.path_length / rec.geodesic if rec.geodesic and rec.geodesic > 0 else math.nan
    status = "" if rec.success else " FAIL"
    text = f"{rec.goal_name} s{rec.seed}: p/l = {ratio:.2f}{status}"
    out.append(f'<text class="annotation" x="{label_at[0]:.2f}" y="{label_at[1]:.2f}" font-size="{font:.1f}" '
               f'font-family="sans-serif">{escape(text)}</text>')
    return out


def render_svg(records: Sequence[TrialRecord], world: WorldMap, grid: bool = False,
               scale: float | None = None) -> str:
    """SVG document text. ``grid`` lays trials out one panel each, one row
    per goal and one column per repetition; otherwise every trial is
    overlaid on a single map."""
    records = list(records)
    if not records:
        warnings.warn("no trial records: writing the outline only", stacklevel=2)
    ox, oy, ex, ey = world.extent
    wm, hm = ex - ox, ey - oy
    pad = 6.0
    if grid and records:
        scale = scale or 4.0
        rows: dict[str, list[TrialRecord]] = {}
        for r in records:
            rows.setdefault(r.goal_name, []).append(r)
        ncol = max(len(v) for v in rows.values())
        label_h = 12.0
        pw, ph = wm * scale, hm * scale + label_h
        width, height = ncol * (pw + pad) + pad, len(rows) * (ph + pad) + pad
        body = []
        for ri, name in enumerate(rows):
            for ci, rec in enumerate(rows[name]):
                x0, y0 = pad + ci * (pw + pad), pad + ri * (ph + pad)
                frame = _Frame(world, x0, y0 + label_h, scale)
                body.append(f'<g class="panel" data-row="{ri}" data-col="{ci}">')
                body.append(_outline_path(world, frame))
                body.extend(_trial_elements(rec, frame, 2.5, (x0 + 2, y0 + label_h - 3), 9))
                body.append("</g>")
    else:
        scale = scale or 12.0
        width, height = wm * scale + 2 * pad, hm * scale + 2 * pad
        frame = _Frame(world, pad, pad, scale)
        body = [_outline_path(world, frame)]
        for k, rec in enumerate(records):
            body.extend(_trial_elements(rec, frame, 4.0, (pad + 4, pad + 14 + 13 * k), 11))
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
            f'viewBox="0 0 {width:.2f} {height:.2f}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="#fff"/>', *body, "</svg>", ""])


def write_svg(path: str | os.PathLike, records: Sequence[TrialRecord], world: WorldMap, grid: bool = False) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(render_svg(records, world, grid))
    os.replace(tmp, path)
