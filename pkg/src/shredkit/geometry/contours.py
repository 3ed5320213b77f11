"""Fragment boundary contours and their polygonal approximation.

Contours are closed pixel chains traced around a fragment's alpha mask,
oriented so the signed (shoelace) area is positive. The polygonal
approximation is Douglas-Peucker with an extra color rule: a segment is also
split where the boundary color deviates too much from the segment mean, so
segment endpoints land where either the geometry bends or the color changes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np


class ContourError(ValueError):
    pass


@dataclass
class Contour:
    """Closed boundary chain: (N, 2) float points as (x, y), per-point RGB."""

    points: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.colors = np.asarray(self.colors, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ContourError("points must be (N, 2)")
        if len(self.points) < 3:
            raise ContourError("a closed contour needs at least 3 points")
        if self.colors.shape != (len(self.points), 3):
            raise ContourError("colors must be (N, 3) matching points")
        d = np.diff(self.points, axis=0)
        if np.any((d == 0).all(axis=1)):
            raise ContourError("consecutive duplicate points")
        if signed_area(self.points) <= 0:
            raise ContourError("contour must be counter-clockwise (positive area)")

    def __len__(self) -> int:
        return len(self.points)

    def normals(self, window: int = 7) -> np.ndarray:
        """Unit outward normals via central differences over `window` points.

        For a positive-area chain the right-hand perpendicular of the tangent
        points outward; callers with a mask can re-check via `orient_normals`.
        """
        half = window // 2
        pts = self.points
        tang = np.roll(pts, -half, axis=0) - np.roll(pts, half, axis=0)
        norm = np.hypot(tang[:, 0], tang[:, 1])
        norm[norm == 0] = 1.0
        tang /= norm[:, None]
        return np.column_stack([tang[:, 1], -tang[:, 0]])


def signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def trace_mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Outer boundary of a binary mask as an (N, 2) array of (x, y) pixels."""
    m = (np.asarray(mask) > 0).astype(np.uint8)
    found, _ = cv2.findContours(m, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    if not found:
        raise ContourError("mask has no opaque pixels")
    pts = max(found, key=cv2.contourArea).reshape(-1, 2).astype(float)
    if len(pts) < 3:
        raise ContourError("mask too small to trace")
    if signed_area(pts) < 0:
        pts = pts[::-1]
    # drop an occasional duplicated closing point
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    pts = pts[keep]
    if np.all(pts[-1] == pts[0]):
        pts = pts[:-1]
    return pts


def contour_from_mask(mask: np.ndarray, rgb: np.ndarray | None = None) -> Contour:
    """Trace `mask` and sample per-point colors from `rgb` (H, W, 3)."""
    pts = trace_mask_boundary(mask)
    xi = pts[:, 0].astype(int)
    yi = pts[:, 1].astype(int)
    if rgb is None:
        colors = np.zeros((len(pts), 3))
    else:
        colors = np.asarray(rgb, dtype=float)[yi, xi, :3]
    return Contour(pts, colors)


def orient_normals(contour: Contour, mask: np.ndarray,
                   normals: np.ndarray, probe: float = 1.5) -> np.ndarray:
    """Flip any normal whose probe point lands inside the mask."""
    m = np.asarray(mask) > 0
    h, w = m.shape
    probe_pts = contour.points + probe * normals
    xi = np.clip(np.round(probe_pts[:, 0]).astype(int), 0, w - 1)
    yi = np.clip(np.round(probe_pts[:, 1]).astype(int), 0, h - 1)
    inside = m[yi, xi]
    out = normals.copy()
    out[inside] *= -1.0
    return out


@dataclass
class Segment:
    """Half-open index run [start, end) along a contour, with its mean color."""

    start: int
    end: int
    mean_color: np.ndarray

    def indices(self, n: int) -> np.ndarray:
        if self.end > self.start:
            return np.arange(self.start, self.end)
        return np.concatenate([np.arange(self.start, n), np.arange(0, self.end)])


@dataclass
class PolygonApprox:
    """Cyclic partition of a contour into segments.

    Segment k runs from vertex index `start` to segment k+1's `start`; chord
    endpoints are the contour points at those indices.
    """

    contour: Contour
    segments: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.segments)

    def chord(self, k: int) -> tuple:
        seg = self.segments[k]
        return self.contour.points[seg.start], self.contour.points[seg.end % len(self.contour)]

    def chord_vector(self, k: int) -> np.ndarray:
        p0, p1 = self.chord(k)
        return p1 - p0

    def chord_length(self, k: int) -> float:
        v = self.chord_vector(k)
        return float(np.hypot(v[0], v[1]))


def _point_chord_distances(pts: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    chord = p1 - p0
    n = np.hypot(chord[0], chord[1])
    if n < 1e-12:
        return np.hypot(pts[:, 0] - p0[0], pts[:, 1] - p0[1])
    return np.abs((pts[:, 0] - p0[0]) * chord[1] - (pts[:, 1] - p0[1]) * chord[0]) / n


def _rdp_breakpoints(pts: np.ndarray, lo: int, hi: int, eps: float, out: list):
    """Classic split recursion over pts[lo..hi] (inclusive endpoints)."""
    if hi - lo < 2:
        return
    inner = pts[lo + 1:hi]
    d = _point_chord_distances(inner, pts[lo], pts[hi])
    k = int(np.argmax(d))
    if d[k] > eps:
        mid = lo + 1 + k
        _rdp_breakpoints(pts, lo, mid, eps, out)
        out.append(mid)
        _rdp_breakpoints(pts, mid, hi, eps, out)


def _color_deviation(colors: np.ndarray) -> tuple:
    mean = colors.mean(axis=0)
    dev = np.linalg.norm(colors - mean, axis=1)
    k = int(np.argmax(dev))
    return float(dev[k]), k, mean


def rdp_simplify(contour: Contour, eps: float, color_tol: float) -> PolygonApprox:
    """Simplify a closed contour into segments split on shape and color.

    Starts from two far-apart seed vertices, runs Douglas-Peucker with
    tolerance `eps`, then further splits any segment whose max color deviation
    from the segment mean exceeds `color_tol` (split at the worst point).
    A final pass merges adjacent segments when the union still satisfies both
    tolerances, so the output does not depend on where the trace started.
    """
    if eps <= 0 or color_tol <= 0:
        raise ValueError("eps and color_tol must be positive")
    pts = contour.points
    n = len(pts)
    centroid = pts.mean(axis=0)
    a0 = int(np.argmax(np.hypot(*(pts - centroid).T)))
    rel = pts - pts[a0]
    a1 = int(np.argmax(np.hypot(rel[:, 0], rel[:, 1])))
    if a1 == a0:
        a1 = (a0 + n // 2) % n
    lo, hi = sorted((a0, a1))

    rolled = np.concatenate([pts[lo:], pts[:lo]])
    hi_r = hi - lo
    breaks = [0]
    _rdp_breakpoints(rolled, 0, hi_r, eps, breaks)
    breaks.append(hi_r)
    _rdp_breakpoints(np.concatenate([rolled, rolled[:1]]), hi_r, n, eps, breaks)

    starts = sorted({(b + lo) % n for b in breaks})

    # color-homogeneity splits
    changed = True
    while changed:
        changed = False
        new_starts = []
        for idx, s in enumerate(starts):
            e = starts[(idx + 1) % len(starts)]
            run = np.arange(s, e) if e > s else np.concatenate(
                [np.arange(s, n), np.arange(0, e)])
            new_starts.append(s)
            if len(run) < 2:
                continue
            dev, k, _ = _color_deviation(contour.colors[run])
            if dev > color_tol:
                # splitting at the worst point isolates it; if that point is
                # the segment start, split just after it instead
                new_starts.append(int(run[k]) if k > 0 else int(run[1]))
                changed = True
        starts = sorted(set(new_starts))

    starts = _merge_collinear(contour, starts, eps, color_tol)

    segs = []
    for idx, s in enumerate(starts):
        e = starts[(idx + 1) % len(starts)]
        run = np.arange(s, e) if e > s else np.concatenate(
            [np.arange(s, n), np.arange(0, e)])
        segs.append(Segment(int(s), int(e), contour.colors[run].mean(axis=0)))
    return PolygonApprox(contour, segs)


def _merge_collinear(contour: Contour, starts: list, eps: float,
                     color_tol: float) -> list:
    pts, colors, n = contour.points, contour.colors, len(contour)
    starts = list(starts)
    if len(starts) <= 3:
        return starts
    merged = True
    while merged and len(starts) > 3:
        merged = False
        for idx in range(len(starts)):
            s = starts[idx]
            mid = starts[(idx + 1) % len(starts)]
            e = starts[(idx + 2) % len(starts)]
            run = np.arange(s, e) if e > s else np.concatenate(
                [np.arange(s, n), np.arange(0, e)])
            if len(run) < 2 or len(run) > n - 1:
                continue
            if _point_chord_distances(pts[run], pts[s], pts[e % n]).max() > eps:
                continue
            dev, _, _ = _color_deviation(colors[run])
            if dev > color_tol:
                continue
            starts.pop((idx + 1) % len(starts))
            merged = True
            break
    return starts


def verify_polygon(poly: PolygonApprox, eps: float, color_tol: float) -> bool:
    """Check the simplification contract on an existing polygon."""
    pts, colors, n = poly.contour.points, poly.contour.colors, len(poly.contour)
    for seg in poly.segments:
        run = seg.indices(n)
        d = _point_chord_distances(pts[run], pts[seg.start], pts[seg.end % n])
        if d.max() > eps + 1e-9:
            return False
        if len(run) >= 2:
            dev, _, _ = _color_deviation(colors[run])
            if dev > color_tol + 1e-9:
                return False
    return True
