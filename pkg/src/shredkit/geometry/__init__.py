"""Planar geometry for fragment puzzles: rigid transforms, boundary contours,
polygonal simplification, and rasterized placement checks."""

from .contours import (
    Contour,
    ContourError,
    PolygonApprox,
    Segment,
    contour_from_mask,
    orient_normals,
    rdp_simplify,
    signed_area,
    trace_mask_boundary,
    verify_polygon,
)
from .fragment import DEFAULT_COLOR_TOL, DEFAULT_RDP_EPS, Fragment
from .raster import (
    DEFAULT_CHECK_SCALE,
    fragments_intersect,
    pairwise_overlap_px,
    placement_bounds,
    placement_intersects,
    rasterize_and_overlap,
    render_placement,
    seam_tolerance_px,
    warp_mask,
    warp_rgba,
)
from .transforms import (
    RigidTransform2D,
    fit_rigid,
    phi,
    transform_distance,
    transforms_close,
    wrap_angle,
)

__all__ = [
    "Contour", "ContourError", "PolygonApprox", "Segment", "Fragment",
    "RigidTransform2D", "contour_from_mask", "orient_normals", "rdp_simplify",
    "signed_area", "trace_mask_boundary", "verify_polygon", "fit_rigid", "phi",
    "transform_distance", "transforms_close", "wrap_angle",
    "fragments_intersect", "pairwise_overlap_px", "placement_bounds",
    "placement_intersects", "rasterize_and_overlap", "render_placement",
    "seam_tolerance_px", "warp_mask", "warp_rgba",
    "DEFAULT_CHECK_SCALE", "DEFAULT_COLOR_TOL", "DEFAULT_RDP_EPS",
]
