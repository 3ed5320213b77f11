"""Render a candidate stitch of two fragments and describe its seam.

The pair is drawn on a canvas rescaled so the union's long side is a fixed
320 px, which keeps seam statistics comparable across puzzle resolutions.
The region of interest is the (8 px dilated) bounding box of the seam
corridor: pixels where the two masks come within 3 px of each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from ..geometry import (
    Fragment,
    RigidTransform2D,
    contour_from_mask,
    orient_normals,
    placement_bounds,
    warp_rgba,
)

CANVAS_MAX_SIDE = 320
SEAM_CORRIDOR_PX = 3
ROI_DILATE_PX = 8
FEATURE_SCHEMA = 1

FEATURE_NAMES = [
    "gap_fraction",
    "overlap_fraction",
    "seam_ratio_min",
    "seam_ratio_max",
    "color_diff_mean",
    "color_diff_median",
    "color_diff_p90",
    "grad_ratio",
    "normal_dot_mean",
    "normal_opposed_fraction",
    "contact_fraction_a",
    "contact_fraction_b",
    "roi_area_fraction",
]

_COLOR_NORM = math.sqrt(3 * 255.0 ** 2)


class NoSeamError(RuntimeError):
    """The two placed fragments are fully disjoint: nothing to evaluate."""


@dataclass
class StitchSample:
    image: np.ndarray  # composite RGBA canvas
    roi: tuple  # (x, y, w, h) in canvas coordinates
    label: int | None = None
    weight: float = 1.0
    layer_a: np.ndarray = field(default=None, repr=False)
    layer_b: np.ndarray = field(default=None, repr=False)
    scale: float = 1.0


def _disk(radius: int) -> np.ndarray:
    return cv2.getStructuringElement(cv2.MORPH_ELLIPSE,
                                     (2 * radius + 1, 2 * radius + 1))


def stitch_render(frag_a: Fragment, frag_b: Fragment,
                  t: RigidTransform2D) -> StitchSample:
    """Render a and b under candidate `t` (a into b's frame), normalized."""
    ident = RigidTransform2D.identity()
    x0, y0, x1, y1 = placement_bounds([(frag_a, t), (frag_b, ident)], 1.0)
    span = max(x1 - x0, y1 - y0, 1.0)
    scale = CANVAS_MAX_SIDE / span
    pad = 4
    offset = (x0 * scale - pad, y0 * scale - pad)
    size = (int(math.ceil((x1 - x0) * scale)) + 2 * pad,
            int(math.ceil((y1 - y0) * scale)) + 2 * pad)
    layer_a = warp_rgba(frag_a, t, scale, offset, size)
    layer_b = warp_rgba(frag_b, ident, scale, offset, size)
    mask_a = layer_a[:, :, 3] > 0
    mask_b = layer_b[:, :, 3] > 0

    disk = _disk(SEAM_CORRIDOR_PX)
    near_a = cv2.dilate(mask_a.astype(np.uint8), disk) > 0
    near_b = cv2.dilate(mask_b.astype(np.uint8), disk) > 0
    corridor = near_a & near_b
    if not corridor.any():
        raise NoSeamError(
            f"fragments {frag_a.id},{frag_b.id}: placed masks never come "
            f"within {SEAM_CORRIDOR_PX} px")

    ys, xs = np.nonzero(corridor)
    x_lo = max(int(xs.min()) - ROI_DILATE_PX, 0)
    y_lo = max(int(ys.min()) - ROI_DILATE_PX, 0)
    x_hi = min(int(xs.max()) + ROI_DILATE_PX + 1, size[0])
    y_hi = min(int(ys.max()) + ROI_DILATE_PX + 1, size[1])
    roi = (x_lo, y_lo, x_hi - x_lo, y_hi - y_lo)

    composite = layer_b.copy()
    on = mask_a
    composite[on] = layer_a[on]
    return StitchSample(composite, roi, layer_a=layer_a, layer_b=layer_b,
                        scale=scale)


def _boundary(mask: np.ndarray) -> np.ndarray:
    er = cv2.erode(mask.astype(np.uint8), _disk(1))
    return mask & (er == 0)


def _cross_color_diffs(edge_src: np.ndarray, img_src: np.ndarray,
                       mask_dst: np.ndarray, img_dst: np.ndarray) -> np.ndarray:
    """RGB distance from each source edge pixel to its nearest dst pixel."""
    if not edge_src.any() or not mask_dst.any():
        return np.empty(0)
    _, (iy, ix) = ndimage.distance_transform_edt(~mask_dst, return_indices=True)
    ys, xs = np.nonzero(edge_src)
    src = img_src[ys, xs, :3].astype(float)
    dst = img_dst[iy[ys, xs], ix[ys, xs], :3].astype(float)
    return np.linalg.norm(src - dst, axis=1)


def extract_roi_features(sample: StitchSample) -> np.ndarray:
    """Fixed-length seam descriptor computed inside the sample's roi."""
    x, y, w, h = sample.roi
    la = sample.layer_a[y:y + h, x:x + w]
    lb = sample.layer_b[y:y + h, x:x + w]
    ma = la[:, :, 3] > 0
    mb = lb[:, :, 3] > 0

    disk = _disk(SEAM_CORRIDOR_PX)
    corridor = (cv2.dilate(ma.astype(np.uint8), disk) > 0) & \
               (cv2.dilate(mb.astype(np.uint8), disk) > 0)
    n_corr = max(int(corridor.sum()), 1)

    gap_fraction = float((corridor & ~ma & ~mb).sum()) / n_corr
    overlap_fraction = float((ma & mb).sum()) / n_corr

    edge_a = _boundary(ma)
    edge_b = _boundary(mb)
    seam_a = int((edge_a & corridor).sum())
    seam_b = int((edge_b & corridor).sum())
    perim_a = max(int(edge_a.sum()), 1)
    perim_b = max(int(edge_b.sum()), 1)
    seam_len = 0.5 * (seam_a + seam_b)
    seam_ratio_min = seam_len / min(perim_a, perim_b)
    seam_ratio_max = seam_len / max(perim_a, perim_b)

    diffs = np.concatenate([
        _cross_color_diffs(edge_a & corridor, la, mb, lb),
        _cross_color_diffs(edge_b & corridor, lb, ma, la),
    ])
    if len(diffs):
        color_mean = float(diffs.mean()) / _COLOR_NORM
        color_median = float(np.median(diffs)) / _COLOR_NORM
        color_p90 = float(np.percentile(diffs, 90)) / _COLOR_NORM
    else:
        color_mean = color_median = color_p90 = 1.0

    # cross-seam color jump relative to the fragments' own texture variation;
    # the gradient baseline is taken away from mask rims so the background
    # does not pollute it
    luma = sample.image[y:y + h, x:x + w, :3].astype(float).mean(axis=2)
    gx = cv2.Sobel(luma, cv2.CV_64F, 1, 0, ksize=3)
    gy = cv2.Sobel(luma, cv2.CV_64F, 0, 1, ksize=3)
    gmag = np.hypot(gx, gy)
    core = (cv2.erode((ma | mb).astype(np.uint8), _disk(2)) > 0)
    interior = core & ~corridor
    base = float(gmag[interior].mean()) if interior.any() else 0.0
    jump = (diffs.mean() if len(diffs) else _COLOR_NORM)
    grad_ratio = min(jump / (base + 1.0), 8.0)

    normal_dot_mean, normal_opposed = _normal_opposition(ma, la, mb, lb)

    canvas_area = sample.image.shape[0] * sample.image.shape[1]
    features = np.array([
        gap_fraction,
        overlap_fraction,
        seam_ratio_min,
        seam_ratio_max,
        color_mean,
        color_median,
        color_p90,
        grad_ratio,
        normal_dot_mean,
        normal_opposed,
        seam_a / perim_a,
        seam_b / perim_b,
        (w * h) / canvas_area,
    ], dtype=float)
    return features


def _normal_opposition(ma, la, mb, lb) -> tuple:
    try:
        ca = contour_from_mask(ma, la[:, :, :3])
        cb = contour_from_mask(mb, lb[:, :, :3])
    except Exception:
        return 0.0, 0.0
    na = orient_normals(ca, ma, ca.normals())
    nb = orient_normals(cb, mb, cb.normals())
    tree = cKDTree(cb.points)
    d, j = tree.query(ca.points, distance_upper_bound=SEAM_CORRIDOR_PX + 1)
    near = np.isfinite(d)
    if not near.any():
        return 0.0, 0.0
    dots = np.sum(na[near] * nb[j[near]], axis=1)
    return float(dots.mean()), float((dots < -0.5).mean())


def features_for_candidates(bundle, cands) -> np.ndarray:
    """Feature matrix for candidates, one row per candidate in given order."""
    rows = []
    for c in cands:
        sample = stitch_render(bundle.fragment(c.i), bundle.fragment(c.j),
                               c.transform)
        rows.append(extract_roi_features(sample))
    return np.array(rows) if rows else np.empty((0, len(FEATURE_NAMES)))
