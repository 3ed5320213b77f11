"""Planar rigid transforms (rotation + translation).

A transform is stored as (theta, tx, ty) with theta wrapped to (-pi, pi].
Applied to a column vector p it computes R(theta) @ p + t, i.e. the 3x3
homogeneous matrix

    [[cos -sin tx]
     [sin  cos ty]
     [  0    0  1]]

`compose(a, b)` equals the matrix product a @ b (b applied first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    theta = float(theta) % TWO_PI
    if theta > math.pi:
        theta -= TWO_PI
    return theta


@dataclass(frozen=True)
class RigidTransform2D:
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))

    @classmethod
    def identity(cls) -> "RigidTransform2D":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def rotation(cls, theta: float) -> "RigidTransform2D":
        return cls(theta, 0.0, 0.0)

    @classmethod
    def translation(cls, tx: float, ty: float) -> "RigidTransform2D":
        return cls(0.0, tx, ty)

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform2D":
        m = np.asarray(m, dtype=float)
        if m.shape == (9,):
            m = m.reshape(3, 3)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
        theta = math.atan2(m[1, 0], m[0, 0])
        return cls(theta, m[0, 2], m[1, 2])

    def as_matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array(
            [[c, -s, self.tx], [s, c, self.ty], [0.0, 0.0, 1.0]], dtype=float
        )

    def as_flat(self) -> list:
        """Row-major 9-float list, the serialization form."""
        return [float(v) for v in self.as_matrix().ravel()]

    def compose(self, other: "RigidTransform2D") -> "RigidTransform2D":
        """self @ other: apply `other` first, then `self`."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        tx = self.tx + c * other.tx - s * other.ty
        ty = self.ty + s * other.tx + c * other.ty
        return RigidTransform2D(self.theta + other.theta, tx, ty)

    def invert(self) -> "RigidTransform2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return RigidTransform2D(-self.theta, -(c * self.tx + s * self.ty),
                                -(-s * self.tx + c * self.ty))

    def apply(self, points) -> np.ndarray:
        """Transform an (N, 2) array of points (also accepts a single pair)."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(pts)
        out[:, 0] = c * pts[:, 0] - s * pts[:, 1] + self.tx
        out[:, 1] = s * pts[:, 0] + c * pts[:, 1] + self.ty
        return out[0] if single else out

    def rotate_vectors(self, vecs) -> np.ndarray:
        """Rotate (N, 2) direction vectors, ignoring the translation part."""
        v = np.atleast_2d(np.asarray(vecs, dtype=float))
        c, s = math.cos(self.theta), math.sin(self.theta)
        out = np.empty_like(v)
        out[:, 0] = c * v[:, 0] - s * v[:, 1]
        out[:, 1] = s * v[:, 0] + c * v[:, 1]
        return out

    def __matmul__(self, other: "RigidTransform2D") -> "RigidTransform2D":
        return self.compose(other)


def phi(t: RigidTransform2D) -> np.ndarray:
    """Map a transform to its parameter vector [tx, ty, theta]."""
    return np.array([t.tx, t.ty, t.theta], dtype=float)


def transform_distance(a: RigidTransform2D, b: RigidTransform2D,
                       center=(0.0, 0.0)) -> tuple:
    """(abs rotation difference rad, displacement of `center` in px).

    The displacement is measured at a reference point so the result does not
    depend on where the local frame origin happens to sit.
    """
    dtheta = abs(wrap_angle(a.theta - b.theta))
    pa = a.apply(np.asarray(center, dtype=float))
    pb = b.apply(np.asarray(center, dtype=float))
    return dtheta, float(np.hypot(pa[0] - pb[0], pa[1] - pb[1]))


def transforms_close(a: RigidTransform2D, b: RigidTransform2D,
                     angle_tol: float, trans_tol: float,
                     center=(0.0, 0.0)) -> bool:
    dtheta, dpos = transform_distance(a, b, center)
    return dtheta <= angle_tol and dpos <= trans_tol


def fit_rigid(src: np.ndarray, dst: np.ndarray,
              weights: np.ndarray | None = None) -> RigidTransform2D:
    """Least-squares rigid transform mapping src points onto dst points.

    Standard SVD solution of the orthogonal Procrustes problem restricted to
    rotations (no reflection, no scale). Needs >= 2 distinct points.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[0] < 2:
        raise ValueError("need matching (N>=2, 2) point arrays")
    if weights is None:
        w = np.ones(len(src))
    else:
        w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    xd = dst - mu_d
    cov = (xs * w[:, None]).T @ xd
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, d]) @ u.T
    theta = math.atan2(rot[1, 0], rot[0, 0])
    c, s = math.cos(theta), math.sin(theta)
    tx = mu_d[0] - (c * mu_s[0] - s * mu_s[1])
    ty = mu_d[1] - (s * mu_s[0] + c * mu_s[1])
    return RigidTransform2D(theta, tx, ty)
