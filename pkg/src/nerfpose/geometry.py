"""Rigid transforms, pinhole camera model, rays, and bounding boxes.

Conventions (BOP-compatible): camera +z forward, +x right, +y down.
A Pose maps points from a source frame (object/world) into a target
frame (camera), x_cam = R @ x + t. Pixel centers sit at half-integer
coordinates, so pixel (i, j) covers [j, j+1) x [i, i+1) and its center
is (j + 0.5, i + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFrame, EmptyInput, NonPositiveDepth

ORTHONORMALITY_TOL = 1e-6


def _as_f64(a, shape) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64).reshape(shape)
    out = np.ascontiguousarray(out)
    out.setflags(write=False)
    return out


def rotation_drift(R: np.ndarray) -> float:
    """Max-abs deviation of R^T R from the identity."""
    return float(np.abs(R.T @ R - np.eye(3)).max())


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3, unitless) and translation (3, meters).

    Construction rejects matrices that are not rotations within 1e-6
    rather than silently repairing them.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _as_f64(self.rotation, (3, 3))
        t = _as_f64(self.translation, (3,))
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose has non-finite entries")
        if rotation_drift(R) > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation is not orthonormal (drift {rotation_drift(R):.3e})")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation determinant is {np.linalg.det(R):.6f}, not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quat(q) -> "Pose":
        """Rotation-only pose from a (w, x, y, z) quaternion (normalized here)."""
        q = np.asarray(q, dtype=np.float64)
        n = np.linalg.norm(q)
        if n < 1e-12:
            raise ValueError("zero quaternion")
        w, x, y, z = q / n
        R = np.array([
            [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * x * z + 2 * w * y],
            [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
            [2 * x * z - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y],
        ])
        return Pose(R, np.zeros(3))

    def to_quat(self) -> np.ndarray:
        """Quaternion (w, x, y, z) with w >= 0."""
        R = self.rotation
        trace = R[0, 0] + R[1, 1] + R[2, 2]
        if trace > 0:
            s = 0.5 / np.sqrt(trace + 1.0)
            q = np.array([0.25 / s, (R[2, 1] - R[1, 2]) * s,
                          (R[0, 2] - R[2, 0]) * s, (R[1, 0] - R[0, 1]) * s])
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                          (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                          0.25 * s, (R[1, 2] + R[2, 1]) / s])
        else:
            s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                          (R[1, 2] + R[2, 1]) / s, 0.25 * s])
        return q if q[0] >= 0 else -q

    @staticmethod
    def from_axis_angle(rotvec) -> "Pose":
        """Rotation-only pose from an axis-angle vector (radians)."""
        return Pose(rotation_from_axis_angle(rotvec), np.zeros(3))

    def to_axis_angle(self) -> np.ndarray:
        q = self.to_quat()
        w = np.clip(q[0], -1.0, 1.0)
        angle = 2.0 * np.arccos(w)
        s = np.sqrt(max(1.0 - w * w, 0.0))
        if s < 1e-12:
            return np.zeros(3)
        return q[1:] / s * angle

    def inverse(self) -> "Pose":
        R = self.rotation.T
        return Pose(R, -R @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points, shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    @property
    def camera_center(self) -> np.ndarray:
        """Camera origin in the source frame, for camera-from-world poses."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Camera +z direction expressed in the source frame."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    R = a.rotation @ b.rotation
    if rotation_drift(R) > 1e-9:
        R = orthonormalize(R)
    return Pose(R, a.rotation @ b.translation + a.translation)


def rotation_from_axis_angle(rotvec) -> np.ndarray:
    """Rodrigues formula for an axis-angle vector."""
    v = np.asarray(rotvec, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3)
    k = v / angle
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def rotation_about_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> Pose:
    """Uniform SO(3) sample via a normalized Gaussian quaternion."""
    q = rng.normal(size=4)
    return Pose.from_quat(q)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1]])


def project(p, k: Intrinsics) -> np.ndarray:
    """Project camera-frame points to pixel coordinates.

    Accepts shape (3,) or (N, 3). Raises NonPositiveDepth if any z <= 0.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = p.reshape(-1, 3)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"point depth min {z.min():.6g} <= 0")
    uv = np.stack([k.fx * pts[:, 0] / z + k.cx, k.fy * pts[:, 1] / z + k.cy], axis=-1)
    return uv[0] if single else uv


def backproject(uv, z, k: Intrinsics) -> np.ndarray:
    """Pixel coordinates + depth back to camera-frame points."""
    uv = np.asarray(uv, dtype=np.float64)
    single = uv.ndim == 1
    pts = uv.reshape(-1, 2)
    z = np.broadcast_to(np.asarray(z, dtype=np.float64), (pts.shape[0],))
    out = np.stack([(pts[:, 0] - k.cx) / k.fx * z, (pts[:, 1] - k.cy) / k.fy * z, z], axis=-1)
    return out[0] if single else out


@dataclass(frozen=True)
class Ray:
    """Ray o + t*d with unit direction and 0 <= near < far (meters)."""

    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        o = _as_f64(self.origin, (3,))
        d = _as_f64(self.direction, (3,))
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not (0 <= self.near < self.far):
            raise ValueError("require 0 <= near < far")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


@dataclass(frozen=True)
class RayGrid:
    """One ray per pixel; origins/directions have shape (H, W, 3)."""

    origins: np.ndarray
    directions: np.ndarray
    near: float
    far: float

    def ray(self, i: int, j: int) -> Ray:
        return Ray(self.origins[i, j], self.directions[i, j], self.near, self.far)


def pixel_rays(pose: Pose, k: Intrinsics, near: float, far: float) -> RayGrid:
    """Rays through every pixel center for a camera-from-world pose.

    All origins equal the camera center in the world frame; directions
    are unit length.
    """
    if not near < far:
        raise ValueError("require near < far")
    u = (np.arange(k.width) + 0.5 - k.cx) / k.fx
    v = (np.arange(k.height) + 0.5 - k.cy) / k.fy
    uu, vv = np.meshgrid(u, v)
    dirs_cam = np.stack([uu, vv, np.ones_like(uu)], axis=-1)
    dirs = dirs_cam @ pose.rotation  # row-vector form of R^T @ d
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.camera_center, dirs.shape).copy()
    return RayGrid(origins, dirs, float(near), float(far))


def look_at(eye, target, up_hint=(0.0, 0.0, 1.0), inplane: float = 0.0) -> Pose:
    """Camera-from-world pose with the optical axis through target.

    The image "up" (-y row direction) is aligned with up_hint as closely
    as possible, then the camera is rolled by `inplane` about its axis.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up_hint = np.asarray(up_hint, dtype=np.float64)
    fwd = target - eye
    dist = np.linalg.norm(fwd)
    if dist < 1e-12:
        raise DegenerateFrame("eye coincides with target")
    z_c = fwd / dist
    up = up_hint - np.dot(up_hint, z_c) * z_c
    n = np.linalg.norm(up)
    if n < 1e-9:
        raise DegenerateFrame("up hint is parallel to the viewing direction")
    y_c = -up / n  # +y points down in the image
    x_c = np.cross(y_c, z_c)
    R = rotation_about_z(inplane) @ np.stack([x_c, y_c, z_c])
    R = orthonormalize(R)
    return Pose(R, -R @ eye)


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned 2D box in continuous pixel coordinates.

    Not validated on construction so degenerate boxes can be detected
    by the operations that consume them; call validate() to check.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)])

    def validate(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate bbox {self}")


_CORNER_SIGNS = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                         dtype=np.float64)


@dataclass(frozen=True)
class Cuboid3D:
    """Oriented 3D box: center, half extents (meters), rotation."""

    center: np.ndarray
    half_extents: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        c = _as_f64(self.center, (3,))
        h = _as_f64(self.half_extents, (3,))
        R = _as_f64(self.orientation, (3, 3))
        if np.any(h < 0):
            raise ValueError("half extents must be non-negative")
        if rotation_drift(R) > ORTHONORMALITY_TOL or abs(np.linalg.det(R) - 1) > ORTHONORMALITY_TOL:
            raise ValueError("cuboid orientation is not a rotation")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)
        object.__setattr__(self, "orientation", R)

    def corners(self) -> np.ndarray:
        """(8, 3) corner positions in the parent frame."""
        return (_CORNER_SIGNS * self.half_extents) @ self.orientation.T + self.center

    def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
        """Boolean inside-test for (N, 3) points."""
        local = (np.asarray(points, dtype=np.float64) - self.center) @ self.orientation
        return np.all(np.abs(local) <= self.half_extents + atol, axis=-1)

    @property
    def diagonal(self) -> float:
        return float(2.0 * np.linalg.norm(self.half_extents))

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.half_extents))

    def scaled(self, s: float) -> "Cuboid3D":
        """Same center and orientation, half extents multiplied by s."""
        return Cuboid3D(self.center, self.half_extents * s, self.orientation)


def tight_cuboid(vertices) -> Cuboid3D:
    """Minimal axis-aligned cuboid enclosing the vertices."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if v.shape[0] == 0:
        raise EmptyInput("tight_cuboid needs at least one vertex")
    lo, hi = v.min(axis=0), v.max(axis=0)
    return Cuboid3D(0.5 * (lo + hi), 0.5 * (hi - lo))


def cuboids_intersect(a: Cuboid3D, b: Cuboid3D) -> bool:
    """Separating-axis test for two oriented boxes (touching counts)."""
    axes = list(a.orientation.T) + list(b.orientation.T)
    for u in a.orientation.T:
        for v in b.orientation.T:
            cr = np.cross(u, v)
            n = np.linalg.norm(cr)
            if n > 1e-9:
                axes.append(cr / n)
    ca = a.corners()
    cb = b.corners()
    for axis in axes:
        pa = ca @ axis
        pb = cb @ axis
        if pa.max() < pb.min() - 1e-12 or pb.max() < pa.min() - 1e-12:
            return False
    return True
