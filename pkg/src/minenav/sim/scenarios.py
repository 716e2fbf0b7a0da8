"""Built-in corridor layouts used by the CLI defaults and the tests."""
from __future__ import annotations

import math


def straight_corridor_spec(length: float = 20.0, width: float = 3.0, ramp: float = 0.0,
                           margin: float = 2.0) -> dict:
    """East-west corridor starting at x = margin; floor drops by ``ramp``."""
    size = (length + 2 * margin, width + 2 * margin)
    y = size[1] / 2
    return {
        "name": "straight",
        "resolution": 0.1,
        "size": list(size),
        "corridor_height": 2.8,
        "corridors": [{"name": "main", "points": [[margin, y, 0.0], [margin + length, y, -ramp]], "width": width}],
        "poses": {"start": [margin + 1.5, y, 0.0], "goal": [margin + length - 1.5, y, 0.0]},
    }


def t_junction_spec(width: float = 3.0) -> dict:
    return {
        "name": "t-junction",
        "resolution": 0.1,
        "size": [24.0, 16.0],
        "corridor_height": 2.8,
        "corridors": [
            {"name": "stem", "points": [[12.0, 2.0], [12.0, 10.0]], "width": width},
            {"name": "bar", "points": [[2.0, 10.0], [22.0, 10.0]], "width": width},
        ],
        "intersections": [{"at": [12.0, 10.0]}],
        "poses": {"start": [12.0, 3.5, math.pi / 2], "goal": [20.0, 10.0, 0.0]},
    }


def l_corridor_spec(width: float = 3.0) -> dict:
    return {
        "name": "l-corridor",
        "resolution": 0.1,
        "size": [20.0, 20.0],
        "corridor_height": 2.8,
        "corridors": [{"name": "bend", "points": [[2.0, 3.0], [16.0, 3.0], [16.0, 17.0]], "width": width}],
        "poses": {"start": [4.0, 3.0, 0.0], "goal": [16.0, 15.0, math.pi / 2]},
    }


# Mine layout: a main drift with two northern branches, one eastern spur,
# an upper drift reached through an L bend and a short alcove. Floor
# elevations agree at every junction and gradients stay below 1 cm/m, so
# floor steps where corridors overlap are under 2 cm. The deepest point of
# the longest route is 0.3 m below the entrance.
def _lerp(a: float, b: float, f: float) -> float:
    return a + (b - a) * f


def mine_spec() -> dict:
    z_main_16, z_main_28, z_main_40 = -0.1, _lerp(-0.1, -0.2, 12 / 24), -0.2
    z_east_18 = _lerp(-0.2, -0.28, 10 / 18)
    return {
        "name": "synthetic-mine",
        "resolution": 0.1,
        "size": [60.0, 30.0],
        "corridor_height": 2.8,
        "corridors": [
            {"name": "main", "points": [[4.0, 8.0, 0.0], [16.0, 8.0, z_main_16], [40.0, 8.0, z_main_40],
                                        [56.0, 8.0, -0.24]], "width": 3.5},
            {"name": "west-branch", "points": [[16.0, 8.0, z_main_16], [16.0, 24.0, -0.22],
                                              [30.0, 24.0, -0.3]], "width": 3.2},
            {"name": "east-branch", "points": [[40.0, 8.0, z_main_40], [40.0, 26.0, -0.28]], "width": 3.0},
            {"name": "spur", "points": [[40.0, 18.0, z_east_18], [54.0, 18.0, -0.28]], "width": 3.0},
            {"name": "alcove", "points": [[28.0, 8.0, z_main_28], [28.0, 12.0, z_main_28]], "width": 2.0},
        ],
        "intersections": [{"at": [16.0, 8.0]}, {"at": [40.0, 8.0]}, {"at": [40.0, 18.0]}],
        "poses": {
            "entrance": [6.0, 8.0, 0.0],
            "G1": [17.2, 8.0, 0.0],
            "G2": [16.0, 16.3, math.pi / 2],
            "G3": [26.0, 24.0, 0.0],
            "G4": [6.0, 8.0, math.pi],
            "G4-start-1": [28.0, 8.0, math.pi],
            "G4-start-2": [16.0, 22.0, -math.pi / 2],
            "G4-start-3": [36.0, 8.0, math.pi],
            "G4-start-4": [24.0, 24.0, math.pi],
            "G4-start-5": [40.0, 14.0, -math.pi / 2],
        },
    }


def mine_goals() -> list[dict]:
    """Goal table for the mine: G1-G3 start at the entrance, G4 returns to
    it from five different starts (one per repetition)."""
    return [
        {"name": "G1", "goal": "G1", "starts": ["entrance"]},
        {"name": "G2", "goal": "G2", "starts": ["entrance"]},
        {"name": "G3", "goal": "G3", "starts": ["entrance"]},
        {"name": "G4", "goal": "G4", "starts": [f"G4-start-{k}" for k in range(1, 6)]},
    ]
