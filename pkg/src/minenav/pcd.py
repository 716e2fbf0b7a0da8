"""ASCII PCD reader/writer for x y z intensity clouds."""
from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

from .geometry import PointCloud


class PcdError(ValueError):
    """Malformed PCD input; the message names the offending line."""


_HEADER_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")


def write_pcd(path: str | os.PathLike, cloud: PointCloud) -> None:
    """Write atomically (temp file then rename)."""
    n = len(cloud)
    header = (
        "# .PCD v0.7 - Point Cloud Data file format\n"
        "VERSION 0.7\n"
        "FIELDS x y z intensity\n"
        "SIZE 8 8 8 8\n"
        "TYPE F F F F\n"
        "COUNT 1 1 1 1\n"
        f"WIDTH {n}\n"
        "HEIGHT 1\n"
        "VIEWPOINT 0 0 0 1 0 0 0\n"
        f"POINTS {n}\n"
        "DATA ascii\n"
    )
    buf = io.StringIO()
    buf.write(header)
    if n:
        np.savetxt(buf, cloud.points, fmt="%.12g")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(buf.getvalue())
    os.replace(tmp, path)


def read_pcd(path: str | os.PathLike, frame_id: str = "map") -> PointCloud:
    text = Path(path).read_text()
    lines = text.splitlines()
    fields: list[str] | None = None
    npoints: int | None = None
    data_line = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *rest = line.split()
        if key not in _HEADER_KEYS:
            raise PcdError(f"{path}:{lineno}: unexpected header key {key!r}")
        if key == "FIELDS":
            fields = rest
        elif key == "POINTS":
            try:
                npoints = int(rest[0])
            except (IndexError, ValueError):
                raise PcdError(f"{path}:{lineno}: POINTS needs an integer") from None
        elif key == "DATA":
            if rest != ["ascii"]:
                raise PcdError(f"{path}:{lineno}: only 'DATA ascii' is supported")
            data_line = lineno
            break
    if data_line is None:
        raise PcdError(f"{path}: missing DATA line")
    if fields is None or fields[:3] != ["x", "y", "z"]:
        raise PcdError(f"{path}: FIELDS must start with x y z")
    ncols = len(fields)
    body = lines[data_line:]
    rows = [ln for ln in body if ln.strip()]
    try:
        if rows:
            arr = np.loadtxt(io.StringIO("\n".join(rows)), dtype=np.float64, ndmin=2)
        else:
            arr = np.zeros((0, ncols))
        if arr.shape[1] != ncols:
            raise ValueError
    except ValueError:
        _locate_bad_row(path, body, data_line, ncols)
        raise PcdError(f"{path}: unreadable point data") from None
    if npoints is not None and npoints != len(arr):
        raise PcdError(f"{path}: header says {npoints} points, found {len(arr)}")
    out = np.zeros((len(arr), 4))
    out[:, :3] = arr[:, :3]
    if "intensity" in fields:
        out[:, 3] = arr[:, fields.index("intensity")]
    return PointCloud(out, frame_id)


def _locate_bad_row(path, body, data_line, ncols):
    for offset, raw in enumerate(body):
        if not raw.strip():
            continue
        parts = raw.split()
        lineno = data_line + offset + 1
        if len(parts) != ncols:
            raise PcdError(f"{path}:{lineno}: expected {ncols} values, got {len(parts)}")
        try:
            [float(p) for p in parts]
        except ValueError:
            raise PcdError(f"{path}:{lineno}: non-numeric value in {raw.strip()!r}") from None
