"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
versions take over. Set MINENAV_PURE_PYTHON=1 to force the fallback.
"""
from __future__ import annotations

import os

if os.environ.get("MINENAV_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl

        BACKEND = "python"

cast_rays = _impl.cast_rays
ndt_derivatives = _impl.ndt_derivatives
segments_visible = _impl.segments_visible
points_inside = _impl.points_inside

HIT_NONE = -1
HIT_FLOOR = 0
HIT_WALL = 1
HIT_CEILING = 2

__all__ = [
    "BACKEND",
    "cast_rays",
    "ndt_derivatives",
    "segments_visible",
    "points_inside",
    "HIT_NONE",
    "HIT_FLOOR",
    "HIT_WALL",
    "HIT_CEILING",
]
