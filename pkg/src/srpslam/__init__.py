"""srpslam: tightly coupled LiDAR-inertial SLAM with structural-plane
pose-graph constraints, plus a synthetic multi-story building simulator."""

from srpslam.errors import SrpSlamError

__version__ = "0.1.0"

__all__ = ["SrpSlamError", "__version__"]
