"""Global planning: obstacle raster, contour polygons, inflation and a
visibility graph searched with Dijkstra."""
from .polygon import ObstaclePolygon, inflate, inflate_all
from .raster import OccupancyImage, extract_contours, rasterize_obstacles
from .visgraph import (
    GraphFileError,
    InCollisionError,
    Path2,
    PlannerError,
    PlannerParams,
    UnreachableError,
    VisibilityGraph,
    build_graph,
    build_graph_from_cells,
    build_graph_from_cloud,
    load_graph,
    nearest_free_point,
    plan,
    save_graph,
    update_graph,
)

__all__ = [
    "GraphFileError", "InCollisionError", "ObstaclePolygon", "OccupancyImage", "Path2", "PlannerError",
    "PlannerParams", "UnreachableError", "VisibilityGraph", "build_graph", "build_graph_from_cells",
    "build_graph_from_cloud", "extract_contours", "inflate", "inflate_all", "load_graph",
    "nearest_free_point", "plan", "rasterize_obstacles", "save_graph", "update_graph",
]
