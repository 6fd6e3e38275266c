"""Numeric kernel dispatch.

The compiled extension (``srpslam.kernels._core``) is used when it imported
successfully; otherwise the pure-NumPy fallback takes over.  Both expose the
same five functions with identical semantics.  Set ``SRPSLAM_FORCE_FALLBACK=1``
to skip the compiled path (used by the parity tests and the benchmark).
"""

from __future__ import annotations

import os

from srpslam.kernels import _fallback

if os.environ.get("SRPSLAM_FORCE_FALLBACK") == "1":
    _impl = _fallback
else:
    try:
        from srpslam.kernels import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

BACKEND = _impl.BACKEND_NAME

raycast_rects = _impl.raycast_rects
ring_curvature = _impl.ring_curvature
voxel_downsample = _impl.voxel_downsample
radius_neighbors = _impl.radius_neighbors
plane_inlier_counts = _impl.plane_inlier_counts

__all__ = [
    "BACKEND",
    "raycast_rects",
    "ring_curvature",
    "voxel_downsample",
    "radius_neighbors",
    "plane_inlier_counts",
]
