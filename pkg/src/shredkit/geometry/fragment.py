"""Fragment: an RGBA raster in its own local pixel frame plus derived shape data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contours import Contour, PolygonApprox, contour_from_mask, orient_normals, rdp_simplify

DEFAULT_RDP_EPS = 3.0
DEFAULT_COLOR_TOL = 32.0


@dataclass
class Fragment:
    id: int
    raster: np.ndarray  # (H, W, 4) uint8, alpha > 0 marks the fragment
    contour: Contour
    polygon: PolygonApprox
    area: int
    centroid: np.ndarray = field(default=None)
    normals: np.ndarray = field(default=None)

    @classmethod
    def from_raster(cls, frag_id: int, raster: np.ndarray,
                    rdp_eps: float = DEFAULT_RDP_EPS,
                    color_tol: float = DEFAULT_COLOR_TOL) -> "Fragment":
        raster = np.asarray(raster)
        if raster.ndim != 3 or raster.shape[2] != 4 or raster.dtype != np.uint8:
            raise ValueError("raster must be (H, W, 4) uint8")
        mask = raster[:, :, 3] > 0
        area = int(mask.sum())
        contour = contour_from_mask(mask, raster[:, :, :3])
        polygon = rdp_simplify(contour, rdp_eps, color_tol)
        ys, xs = np.nonzero(mask)
        centroid = np.array([xs.mean(), ys.mean()])
        normals = orient_normals(contour, mask, contour.normals())
        return cls(frag_id, raster, contour, polygon, area, centroid, normals)

    @property
    def mask(self) -> np.ndarray:
        return self.raster[:, :, 3] > 0

    @property
    def size(self) -> tuple:
        h, w = self.raster.shape[:2]
        return w, h

    def same_pixels(self, other: "Fragment") -> bool:
        return (self.id == other.id
                and self.raster.shape == other.raster.shape
                and bool(np.all(self.raster == other.raster)))
