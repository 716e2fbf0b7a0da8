"""Simulated GPU-free navigation stack for underground mine passages.

Subpackages cover the world simulator, map-based NDT localization, terrain
segmentation, visibility-graph planning, pure pursuit control and the
mission evaluation harness.
"""
from .geometry import PointCloud, Pose2, RigidTransform, compose, inverse, project_se2, transform_cloud

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "Pose2",
    "RigidTransform",
    "compose",
    "inverse",
    "project_se2",
    "transform_cloud",
]
