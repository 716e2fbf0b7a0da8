"""Synthetic mine simulator: corridor worlds, LiDAR ray casting, robot
motion and drifting odometry."""
