"""Camera-pose generators for capture and for pose hypotheses.

Two samplers: look-at poses on concentric spheres (used to collect
training views of an object), and the 26-station cube rig expanded to
104 in-plane rotated hypothesis cameras used by the coarse estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera
from .geometry import (
    BBox2D,
    Cuboid3D,
    Intrinsics,
    Pose,
    compose,
    look_at,
    project,
    rotation_about_z,
    rotation_from_axis_angle,
)

# elevation band for sphere sampling; poles are excluded so the fixed
# z-up hint never degenerates
ELEVATION_LIMIT_DEG = 80.0


@dataclass(frozen=True)
class SphereSampling:
    """Concentric-sphere view sampling: |radii| x elevations x azimuths."""

    radii: tuple[float, ...] = (0.35, 0.455, 0.63)
    elevations: int = 8
    azimuths: int = 16
    inplane: float = 0.0

    def __post_init__(self):
        if len(self.radii) == 0 or any(r <= 0 for r in self.radii):
            raise ValueError("radii must be positive")
        if len(set(self.radii)) != len(self.radii):
            raise ValueError("radii must be distinct")
        if self.elevations < 1 or self.azimuths < 1:
            raise ValueError("counts must be >= 1")

    @property
    def count(self) -> int:
        return len(self.radii) * self.elevations * self.azimuths


def sphere_views(s: SphereSampling, target) -> list[Pose]:
    """Camera-from-world poses on concentric spheres around target.

    Every optical axis passes through target; in-plane rotation is the
    fixed s.inplane for all views. Order is radius-major, then
    elevation, then azimuth.
    """
    target = np.asarray(target, dtype=np.float64)
    lim = np.radians(ELEVATION_LIMIT_DEG)
    if s.elevations == 1:
        elevs = np.array([0.0])
    else:
        elevs = np.linspace(-lim, lim, s.elevations)
    azims = np.arange(s.azimuths) * (2 * np.pi / s.azimuths)
    poses = []
    for r in s.radii:
        for el in elevs:
            for az in azims:
                eye = target + r * np.array(
                    [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
                poses.append(look_at(eye, target, inplane=s.inplane))
    return poses


@dataclass(frozen=True)
class CubeRig:
    """Hypothesis-camera cube: centered on the object, edge in meters."""

    center: np.ndarray
    edge: float

    def __post_init__(self):
        if self.edge <= 0:
            raise ValueError("cube edge must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))


def rig_from_initial(center, initial: Pose) -> CubeRig:
    """Cube sized so the initial camera sits on a corner station."""
    center = np.asarray(center, dtype=np.float64)
    dist = np.linalg.norm(initial.camera_center - center)
    return CubeRig(center, 2.0 * dist / np.sqrt(3.0))


def _station_offsets() -> np.ndarray:
    """26 cube-surface stations: 8 corners, 12 edge midpoints, 6 face centers.

    Unit-cube coordinates (components in {-1, 0, +1}); the first entry
    is the (+1, +1, +1) corner that anchors the initial camera.
    """
    corners = [(1, 1, 1)] + [c for c in
                             [(sx, sy, sz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
                             if c != (1, 1, 1)]
    edges = []
    faces = []
    for sx in (-1, 0, 1):
        for sy in (-1, 0, 1):
            for sz in (-1, 0, 1):
                n_zero = (sx == 0) + (sy == 0) + (sz == 0)
                if n_zero == 1:
                    edges.append((sx, sy, sz))
                elif n_zero == 2:
                    faces.append((sx, sy, sz))
    return np.array(corners + sorted(edges) + sorted(faces), dtype=np.float64)


def _rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vector a to unit vector b."""
    c = np.cross(a, b)
    d = float(np.dot(a, b))
    if np.linalg.norm(c) < 1e-12:
        if d > 0:
            return np.eye(3)
        # opposite vectors: rotate half a turn about any perpendicular
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return rotation_from_axis_angle(perp / np.linalg.norm(perp) * np.pi)
    angle = np.arctan2(np.linalg.norm(c), d)
    return rotation_from_axis_angle(c / np.linalg.norm(c) * angle)


def _stable_up_hint(view: np.ndarray) -> np.ndarray:
    """z-up hint, falling back to x when the view is nearly vertical."""
    if abs(view @ np.array([0.0, 0.0, 1.0])) > 0.999:
        return np.array([1.0, 0.0, 0.0])
    return np.array([0.0, 0.0, 1.0])


def cube_cameras(rig: CubeRig, initial: Pose) -> list[Pose]:
    """26 cameras on the cube surface, all looking at rig.center.

    The cube is oriented so its (+1,+1,+1) corner coincides with the
    initial (distance-adjusted) camera center; station 0 therefore
    reuses that position exactly.
    """
    eye0 = initial.camera_center
    radial = eye0 - rig.center
    dist = np.linalg.norm(radial)
    if dist < 1e-12:
        raise ValueError("initial camera coincides with the rig center")
    corner_dir = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    M = _rotation_between(corner_dir, radial / dist)
    offsets = _station_offsets() * (rig.edge / 2.0)
    poses = []
    for i, off in enumerate(offsets):
        eye = rig.center + M @ off
        if i == 0:
            eye = eye0  # bit-exact anchor
        view = rig.center - eye
        view /= np.linalg.norm(view)
        poses.append(look_at(eye, rig.center, up_hint=_stable_up_hint(view)))
    return poses


INPLANE_STEPS = (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)


def quadruplets(cams: list[Pose]) -> list[Pose]:
    """Expand each camera into 4 in-plane rotations {0, 90, 180, 270} deg.

    Output is station-major, rotation-minor; camera centers and optical
    axes are unchanged by the expansion.
    """
    out = []
    for pose in cams:
        for angle in INPLANE_STEPS:
            roll = Pose(rotation_about_z(angle), np.zeros(3))
            out.append(compose(roll, pose))
    return out


def projected_extent(pose: Pose, cuboid: Cuboid3D, k: Intrinsics) -> tuple[float, float]:
    """Pixel width/height of the projected cuboid corners."""
    cam = pose.apply(cuboid.corners())
    if np.any(cam[:, 2] <= 0):
        raise BehindCamera("cuboid corner at or behind the camera")
    uv = project(cam, k)
    return float(uv[:, 0].max() - uv[:, 0].min()), float(uv[:, 1].max() - uv[:, 1].min())


def adjust_distance(initial: Pose, bbox: BBox2D, k: Intrinsics,
                    object_cuboid: Cuboid3D, max_iters: int = 32) -> Pose:
    """Slide the camera along its optical axis until the projected cuboid
    fits the bbox.

    The larger of the width/height ratios drives the update so the
    projection ends up contained in the box. Iterated to a fixed point,
    which makes the operation idempotent.
    """
    if bbox.width <= 0 or bbox.height <= 0:
        raise ValueError(f"degenerate bbox {bbox}")
    t = initial.translation.copy()
    for _ in range(max_iters):
        pose = Pose(initial.rotation, t)
        w, h = projected_extent(pose, object_cuboid, k)
        ratio = max(w / bbox.width, h / bbox.height)
        if abs(ratio - 1.0) < 1e-12:
            break
        # extent scales ~1/depth; moving the camera back by delta adds
        # delta to the z-component of the object translation
        t = t + np.array([0.0, 0.0, t[2] * (ratio - 1.0)])
        if t[2] <= 0:
            raise BehindCamera("distance adjustment pushed the object behind the camera")
    return Pose(initial.rotation, t)
