"""Stereo visual-odometry estimation kit.

Consistent pose-from-points estimation with triangulation uncertainty,
sliding-window epipolar refinement, and a synthetic benchmark suite.
"""

__version__ = "0.1.0"
