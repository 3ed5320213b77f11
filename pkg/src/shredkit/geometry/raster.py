"""Rasterized placement: warping fragments under poses and overlap counting.

All placement checks in the assembly stack reduce to "how many pixels do two
posed fragments share". Warping is nearest-neighbor so mask areas are stable,
and checks default to half resolution which is plenty for counting.
"""

from __future__ import annotations

import math

import cv2
import numpy as np

from .transforms import RigidTransform2D

DEFAULT_CHECK_SCALE = 0.5
SEAM_TOL_AREA_FRACTION = 0.002
SEAM_TOL_MIN_PX = 30.0


def seam_tolerance_px(area_a: float, area_b: float,
                      scale: float = DEFAULT_CHECK_SCALE) -> float:
    """Overlap budget (in scaled pixels) that still counts as a clean seam."""
    full = max(SEAM_TOL_AREA_FRACTION * min(area_a, area_b), SEAM_TOL_MIN_PX)
    return full * scale * scale


def _corners(w: int, h: int) -> np.ndarray:
    return np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=float)


def placement_bounds(frags_poses, scale: float = 1.0) -> tuple:
    """(min_x, min_y, max_x, max_y) of all transformed raster corners."""
    pts = []
    for frag, pose in frags_poses:
        w, h = frag.size
        pts.append(pose.apply(_corners(w, h)) * scale)
    allpts = np.vstack(pts)
    return (float(allpts[:, 0].min()), float(allpts[:, 1].min()),
            float(allpts[:, 0].max()), float(allpts[:, 1].max()))


def _affine_for(pose: RigidTransform2D, scale: float,
                offset: tuple) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return np.array([
        [scale * c, -scale * s, scale * pose.tx - offset[0]],
        [scale * s, scale * c, scale * pose.ty - offset[1]],
    ])


def warp_mask(frag, pose: RigidTransform2D, scale: float,
              offset: tuple, size: tuple) -> np.ndarray:
    """Fragment alpha mask placed on a canvas of `size` = (W, H)."""
    m = (frag.raster[:, :, 3] > 0).astype(np.uint8)
    aff = _affine_for(pose, scale, offset)
    return cv2.warpAffine(m, aff, size, flags=cv2.INTER_NEAREST,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0)


def warp_rgba(frag, pose: RigidTransform2D, scale: float,
              offset: tuple, size: tuple) -> np.ndarray:
    aff = _affine_for(pose, scale, offset)
    return cv2.warpAffine(frag.raster, aff, size, flags=cv2.INTER_NEAREST,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0)


def _canvas_for(frags_poses, scale: float) -> tuple:
    x0, y0, x1, y1 = placement_bounds(frags_poses, scale)
    pad = 2
    offset = (x0 - pad, y0 - pad)
    size = (int(math.ceil(x1 - x0)) + 2 * pad, int(math.ceil(y1 - y0)) + 2 * pad)
    return offset, size


def rasterize_and_overlap(frags_poses, canvas_scale: float = DEFAULT_CHECK_SCALE) -> int:
    """Number of canvas pixels covered by two or more posed fragments."""
    frags_poses = list(frags_poses)
    if len(frags_poses) < 2:
        return 0
    offset, size = _canvas_for(frags_poses, canvas_scale)
    counts = np.zeros((size[1], size[0]), dtype=np.uint16)
    for frag, pose in frags_poses:
        counts += warp_mask(frag, pose, canvas_scale, offset, size)
    return int(np.count_nonzero(counts >= 2))


def pairwise_overlap_px(frag_a, pose_a, frag_b, pose_b,
                        scale: float = DEFAULT_CHECK_SCALE) -> int:
    """Overlap pixel count between two posed fragments at `scale`."""
    pair = [(frag_a, pose_a), (frag_b, pose_b)]
    ba = placement_bounds([pair[0]], scale)
    bb = placement_bounds([pair[1]], scale)
    if ba[2] < bb[0] or bb[2] < ba[0] or ba[3] < bb[1] or bb[3] < ba[1]:
        return 0
    x0, y0 = max(ba[0], bb[0]) - 2, max(ba[1], bb[1]) - 2
    x1, y1 = min(ba[2], bb[2]) + 2, min(ba[3], bb[3]) + 2
    size = (int(math.ceil(x1 - x0)), int(math.ceil(y1 - y0)))
    if size[0] <= 0 or size[1] <= 0:
        return 0
    ma = warp_mask(frag_a, pose_a, scale, (x0, y0), size)
    mb = warp_mask(frag_b, pose_b, scale, (x0, y0), size)
    return int(np.count_nonzero(ma & mb))


def fragments_intersect(frag_a, pose_a, frag_b, pose_b,
                        scale: float = DEFAULT_CHECK_SCALE) -> bool:
    """True when the pair overlaps beyond the seam tolerance."""
    overlap = pairwise_overlap_px(frag_a, pose_a, frag_b, pose_b, scale)
    return overlap > seam_tolerance_px(frag_a.area, frag_b.area, scale)


def placement_intersects(frags_poses, scale: float = DEFAULT_CHECK_SCALE) -> bool:
    """Any pairwise intersection beyond seam tolerance in a placement."""
    frags_poses = list(frags_poses)
    for i in range(len(frags_poses)):
        for j in range(i + 1, len(frags_poses)):
            fa, pa = frags_poses[i]
            fb, pb = frags_poses[j]
            if fragments_intersect(fa, pa, fb, pb, scale):
                return True
    return False


def render_placement(frags_poses, scale: float = 1.0,
                     outlines: bool = False) -> np.ndarray:
    """Composite posed fragments onto one RGBA canvas (later ids on top)."""
    frags_poses = sorted(frags_poses, key=lambda fp: fp[0].id)
    offset, size = _canvas_for(frags_poses, scale)
    canvas = np.zeros((size[1], size[0], 4), dtype=np.uint8)
    for frag, pose in frags_poses:
        layer = warp_rgba(frag, pose, scale, offset, size)
        on = layer[:, :, 3] > 0
        canvas[on] = layer[on]
        if outlines:
            pts = (pose.apply(frag.contour.points) * scale
                   - np.array(offset)).astype(np.int32)
            cv2.polylines(canvas, [pts.reshape(-1, 1, 2)], True,
                          (255, 255, 255, 255), 1)
    return canvas
