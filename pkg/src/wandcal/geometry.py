"""Pinhole camera model with radial-tangential distortion, rigid poses.

Conventions
-----------
* World frame is the frame of camera 0.
* A pose maps world points into the camera frame: ``X_cam = R @ X_world + t``.
* Pixel centers sit at integer coordinates; ``u`` runs along image columns.
* Distortion coefficients follow the usual ``(k1, k2, p1, p2, k3)`` layout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, NoConvergence

EPS_Z = 1e-6
UNDISTORT_MAX_ITERS = 50


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    dist: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        dist = tuple(float(d) for d in self.dist)
        if len(dist) > 5:
            raise ValueError("at most 5 distortion coefficients (k1, k2, p1, p2, k3)")
        object.__setattr__(self, "dist", dist + (0.0,) * (5 - len(dist)))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def with_params(self, fx, fy, cx, cy, dist) -> "CameraIntrinsics":
        return CameraIntrinsics(float(fx), float(fy), float(cx), float(cy),
                                self.width, self.height, tuple(dist), self.name)

    def to_dict(self) -> dict:
        return {"name": self.name, "width": self.width, "height": self.height,
                "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "dist": list(self.dist)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
                   width=int(d["width"]), height=int(d["height"]),
                   dist=tuple(d.get("dist", ())), name=str(d["name"]))


def _canonical_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid motion; rotation held as a unit quaternion (w, x, y, z)."""

    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "quaternion", _canonical_quat(self.quaternion))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        self.quaternion.setflags(write=False)
        self.translation.setflags(write=False)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    @classmethod
    def from_matrix(cls, R, t) -> "CameraPose":
        x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
        return cls(np.array([w, x, y, z]), t)

    @classmethod
    def from_rotvec(cls, rotvec, t) -> "CameraPose":
        return cls.from_matrix(rotvec_to_matrix(rotvec), t)

    @cached_property
    def R(self) -> np.ndarray:
        w, x, y, z = self.quaternion
        R = Rotation.from_quat([x, y, z, w]).as_matrix()
        R.setflags(write=False)
        return R

    @property
    def t(self) -> np.ndarray:
        return self.translation

    @property
    def rotvec(self) -> np.ndarray:
        return matrix_to_rotvec(self.R)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.translation

    def transform(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.R.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return (np.array_equal(self.quaternion, other.quaternion)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.quaternion.tobytes(), self.translation.tobytes()))


def compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Pose that applies ``b`` first, then ``a``."""
    return CameraPose.from_matrix(a.R @ b.R, a.R @ b.t + a.t)


def inverse(a: CameraPose) -> CameraPose:
    return CameraPose.from_matrix(a.R.T, -a.R.T @ a.t)


def rotation_angle(R) -> float:
    """Angle of a rotation matrix in radians, robust near 0 and pi."""
    return float(np.linalg.norm(matrix_to_rotvec(R)))


def pose_error(a: CameraPose, b: CameraPose) -> tuple[float, float]:
    """(rotation angle, translation distance) between two poses."""
    return rotation_angle(a.R @ b.R.T), float(np.linalg.norm(a.t - b.t))


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotvec_to_matrix(rotvec) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()


def matrix_to_rotvec(R) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def projection_matrix(intrinsics: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    return intrinsics.K @ np.hstack([pose.R, pose.t[:, None]])


# -- distortion ------------------------------------------------------------

def distort(xy, dist) -> np.ndarray:
    """Apply radial-tangential distortion to normalized coordinates (..., 2)."""
    xy = np.asarray(xy, dtype=float)
    k1, k2, p1, p2, k3 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def distort_jacobian(xy, dist) -> np.ndarray:
    """d(distorted)/d(normalized), shape (..., 2, 2)."""
    xy = np.asarray(xy, dtype=float)
    k1, k2, p1, p2, k3 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    drad = 2.0 * (k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2))  # d radial / d(r2) * 2
    J = np.empty(xy.shape[:-1] + (2, 2))
    J[..., 0, 0] = radial + x * x * drad + 2.0 * p1 * y + 6.0 * p2 * x
    J[..., 0, 1] = x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 0] = x * y * drad + 2.0 * p1 * x + 2.0 * p2 * y
    J[..., 1, 1] = radial + y * y * drad + 6.0 * p1 * y + 2.0 * p2 * x
    return J


def distort_coeff_jacobian(xy) -> np.ndarray:
    """d(distorted)/d(k1, k2, p1, p2, k3), shape (..., 2, 5)."""
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    J = np.empty(xy.shape[:-1] + (2, 5))
    J[..., 0, 0] = x * r2
    J[..., 1, 0] = y * r2
    J[..., 0, 1] = x * r2 * r2
    J[..., 1, 1] = y * r2 * r2
    J[..., 0, 2] = 2.0 * x * y
    J[..., 1, 2] = r2 + 2.0 * y * y
    J[..., 0, 3] = r2 + 2.0 * x * x
    J[..., 1, 3] = 2.0 * x * y
    J[..., 0, 4] = x * r2 ** 3
    J[..., 1, 4] = y * r2 ** 3
    return J


# -- projection ------------------------------------------------------------

def project_points(intrinsics: CameraIntrinsics, pose: CameraPose, points):
    """Vectorized projection.

    Returns ``(uv, valid)`` where ``uv`` is (N, 2) and ``valid`` flags points
    strictly in front of the camera. Invalid rows of ``uv`` are NaN.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pc = pose.transform(pts)
    valid = pc[:, 2] > EPS_Z
    uv = np.full((len(pts), 2), np.nan)
    if valid.any():
        xy = pc[valid, :2] / pc[valid, 2:3]
        d = distort(xy, intrinsics.dist)
        uv[valid, 0] = intrinsics.fx * d[:, 0] + intrinsics.cx
        uv[valid, 1] = intrinsics.fy * d[:, 1] + intrinsics.cy
    return uv, valid


def project(intrinsics: CameraIntrinsics, pose: CameraPose, point) -> np.ndarray:
    """Project a single world point to a pixel; raises BehindCamera."""
    point = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(point)):
        raise ValueError("point must be finite")
    uv, valid = project_points(intrinsics, pose, point[None])
    if not valid[0]:
        raise BehindCamera(f"point {point.tolist()} is behind the camera")
    return uv[0]


def normalized_to_pixels(intrinsics: CameraIntrinsics, xy) -> np.ndarray:
    d = distort(xy, intrinsics.dist)
    return np.stack([intrinsics.fx * d[..., 0] + intrinsics.cx,
                     intrinsics.fy * d[..., 1] + intrinsics.cy], axis=-1)


def _check_fold(xy, dist) -> np.ndarray:
    # a root past the fold of the distortion map is not a physical ray
    k1, k2, _, _, k3 = dist
    r2 = np.sum(xy * xy, axis=-1)
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    if np.any(radial <= 0.0) or np.any(np.linalg.det(distort_jacobian(xy, dist)) <= 0.0):
        raise NoConvergence("pixel lies outside the invertible region of the distortion model")
    return xy


def undistort_points(intrinsics: CameraIntrinsics, pixels, tol=1e-15) -> np.ndarray:
    """Invert the distortion model for pixels (..., 2) -> normalized (..., 2).

    Newton iterations on the distortion map starting from the distorted
    normalized coordinates; raises NoConvergence if any point fails to
    settle within the iteration budget.
    """
    px = np.asarray(pixels, dtype=float)
    if not np.all(np.isfinite(px)):
        raise ValueError("pixels must be finite")
    target = np.stack([(px[..., 0] - intrinsics.cx) / intrinsics.fx,
                       (px[..., 1] - intrinsics.cy) / intrinsics.fy], axis=-1)
    if not any(intrinsics.dist):
        return target
    flat_target = target.reshape(-1, 2)
    xy = flat_target.copy()
    for _ in range(UNDISTORT_MAX_ITERS):
        res = distort(xy, intrinsics.dist) - flat_target
        if np.all(np.abs(res) <= tol * (1.0 + np.abs(flat_target))):
            return _check_fold(xy, intrinsics.dist).reshape(target.shape)
        J = distort_jacobian(xy, intrinsics.dist)
        step = np.linalg.solve(J, res[..., None])[..., 0]
        xy = xy - step
        if not np.all(np.isfinite(xy)):
            break
    res = distort(xy, intrinsics.dist) - flat_target
    # accept round-off-limited convergence; reject genuine divergence
    if np.all(np.isfinite(res)) and np.all(np.abs(res) <= 1e-12 * (1.0 + np.abs(flat_target))):
        return _check_fold(xy, intrinsics.dist).reshape(target.shape)
    raise NoConvergence(f"distortion inversion failed after {UNDISTORT_MAX_ITERS} iterations")


def undistort_pixel(intrinsics: CameraIntrinsics, pixel) -> np.ndarray:
    return undistort_points(intrinsics, np.asarray(pixel, dtype=float).reshape(2))


# -- files -----------------------------------------------------------------

def load_intrinsics(path) -> list[CameraIntrinsics]:
    with open(path) as fh:
        doc = json.load(fh)
    cams = doc["cameras"] if isinstance(doc, dict) else doc
    out = [CameraIntrinsics.from_dict(c) for c in cams]
    names = [c.name for c in out]
    if len(set(names)) != len(names):
        raise ValueError("camera names must be unique")
    return out


def save_intrinsics(path, cameras: Sequence[CameraIntrinsics]) -> None:
    with open(path, "w") as fh:
        json.dump([c.to_dict() for c in cameras], fh, indent=2)
        fh.write("\n")
