"""Analytic ground-truth scenes: known density/color fields for oracle tests.

Scenes are built from primitives (sphere, box, torus shell) carrying a
constant interior density and a view-dependent color given by degree-2
spherical-harmonics coefficients per channel. They render through the
same quadrature path as the trained field (see rendering.py) and stand
in for captured objects when generating synthetic datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .encoding import sh_basis
from .geometry import Cuboid3D, Intrinsics, Pose, project, rotation_about_z
from .rendering import RenderOptions, render_image
from .sampling import SphereSampling, sphere_views


def constant_sh(rgb) -> np.ndarray:
    """SH coefficients (3, 9) for a view-independent color."""
    coeffs = np.zeros((3, 9))
    coeffs[:, 0] = np.asarray(rgb, dtype=np.float64) / 0.28209479177387814
    return coeffs


def tinted_sh(rgb, tint, axis=0, strength=0.15) -> np.ndarray:
    """Constant color plus a linear view tint along a spatial axis (0=x,1=y,2=z)."""
    basis_index = {0: 3, 1: 1, 2: 2}[axis]  # degree-1 basis order is (y, z, x)
    coeffs = constant_sh(rgb)
    coeffs[:, basis_index] = np.asarray(tint, dtype=np.float64) * strength
    return coeffs


@dataclass(frozen=True)
class Primitive:
    """Base: density (per meter) inside the shape, SH color (3, 9)."""

    density: float
    sh_rgb: np.ndarray

    def sdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sdf_torch(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def surface_points(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Primitive):
    center: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    radius: float = 0.1

    def sdf(self, x):
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def sdf_torch(self, x):
        c = torch.as_tensor(np.asarray(self.center), dtype=x.dtype)
        return torch.linalg.norm(x - c, dim=-1) - self.radius

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius

    def surface_points(self, n, rng):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * v


@dataclass(frozen=True)
class Box(Primitive):
    center: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    half_extents: np.ndarray = dc_field(default_factory=lambda: np.full(3, 0.1))

    def sdf(self, x):
        q = np.abs(x - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def sdf_torch(self, x):
        c = torch.as_tensor(np.asarray(self.center), dtype=x.dtype)
        h = torch.as_tensor(np.asarray(self.half_extents), dtype=x.dtype)
        q = (x - c).abs() - h
        outside = torch.linalg.norm(q.clamp(min=0.0), dim=-1)
        inside = q.max(dim=-1).values.clamp(max=0.0)
        return outside + inside

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_extents, dtype=np.float64)
        return c - h, c + h

    def surface_points(self, n, rng):
        h = np.asarray(self.half_extents, dtype=np.float64)
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        areas = areas / areas.sum()
        pts = []
        for i in range(n):
            axis = rng.choice(3, p=areas)
            side = rng.choice([-1.0, 1.0])
            p = rng.uniform(-h, h)
            p[axis] = side * h[axis]
            pts.append(p)
        return np.asarray(self.center) + np.array(pts)


@dataclass(frozen=True)
class TorusShell(Primitive):
    """Torus around the local z axis: major radius R, tube radius r."""

    center: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    major_radius: float = 0.1
    tube_radius: float = 0.03

    def sdf(self, x):
        p = x - np.asarray(self.center)
        q = np.hypot(np.hypot(p[..., 0], p[..., 1]) - self.major_radius, p[..., 2])
        return q - self.tube_radius

    def sdf_torch(self, x):
        c = torch.as_tensor(np.asarray(self.center), dtype=x.dtype)
        p = x - c
        ring = torch.hypot(p[..., 0], p[..., 1]) - self.major_radius
        return torch.hypot(ring, p[..., 2]) - self.tube_radius

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        r = self.major_radius + self.tube_radius
        return c - [r, r, self.tube_radius], c + [r, r, self.tube_radius]

    def surface_points(self, n, rng):
        u = rng.uniform(0, 2 * np.pi, n)
        v = rng.uniform(0, 2 * np.pi, n)
        ring = self.major_radius + self.tube_radius * np.cos(v)
        pts = np.stack([ring * np.cos(u), ring * np.sin(u),
                        self.tube_radius * np.sin(v)], axis=-1)
        return np.asarray(self.center) + pts


class AnalyticScene:
    """Closed-form radiance source compatible with the shared renderer."""

    def __init__(self, primitives: list[Primitive], domain: Cuboid3D,
                 background=(0.0, 0.0, 0.0), symmetries: list[Pose] | None = None):
        if np.abs(domain.orientation - np.eye(3)).max() > 1e-12:
            raise ValueError("analytic scene domain must be axis-aligned")
        self.primitives = list(primitives)
        self.domain = domain
        self.crop = None
        self.occupancy = None
        self.background = np.clip(np.asarray(background, dtype=np.float64), 0, 1)
        self.symmetries = symmetries or [Pose.identity()]
        if self.primitives:
            self._sh = torch.stack(
                [torch.from_numpy(np.asarray(p.sh_rgb, dtype=np.float64))
                 for p in self.primitives])
        else:
            self._sh = torch.zeros((0, 3, 9), dtype=torch.float64)

    def query_batch(self, x: torch.Tensor, d: torch.Tensor):
        """Density sum and density-weighted color blend of the primitives."""
        xd = x.double()
        basis = sh_basis(d.double())  # (N, 9)
        sigma = torch.zeros(x.shape[0], dtype=torch.float64)
        rgb_num = torch.zeros((x.shape[0], 3), dtype=torch.float64)
        for prim, sh in zip(self.primitives, self._sh):
            inside = (prim.sdf_torch(xd) < 0).double()
            color = torch.clamp(basis @ sh.T, 0.0, 1.0)  # (N, 3)
            sigma = sigma + prim.density * inside
            rgb_num = rgb_num + (prim.density * inside).unsqueeze(1) * color
        lo = torch.as_tensor(self.domain.center - self.domain.half_extents)
        hi = torch.as_tensor(self.domain.center + self.domain.half_extents)
        in_domain = ((xd >= lo) & (xd <= hi)).all(dim=1).double()
        sigma = sigma * in_domain
        rgb = rgb_num / torch.clamp(sigma, min=1e-12).unsqueeze(1)
        rgb = torch.where((sigma > 0).unsqueeze(1), rgb, torch.zeros_like(rgb))
        return sigma, rgb

    def content_bounds(self) -> Cuboid3D:
        """Tight axis-aligned cuboid around all primitives."""
        los, his = zip(*[p.bounds() for p in self.primitives])
        lo = np.min(np.array(los), axis=0)
        hi = np.max(np.array(his), axis=0)
        return Cuboid3D(0.5 * (lo + hi), 0.5 * (hi - lo))

    @property
    def content_cuboid(self) -> Cuboid3D:
        """Estimator protocol: region assumed to contain the object."""
        return self.content_bounds()

    def model_points(self, n: int = 512, seed: int = 0) -> np.ndarray:
        """Deterministic surface samples; the mesh stand-in for metrics."""
        rng = np.random.default_rng(seed)
        per = max(1, n // len(self.primitives))
        pts = [p.surface_points(per, rng) for p in self.primitives]
        return np.concatenate(pts)[:n]


def stock_scene(name: str) -> AnalyticScene:
    """Built-in fixtures: 'asym3' (no symmetry) and 'sym4' (4-fold about z)."""
    if name == "asym3":
        prims = [
            Sphere(density=120.0, sh_rgb=tinted_sh([0.85, 0.25, 0.2], [0.5, 0.5, 0.9], axis=2),
                   center=np.array([0.06, 0.02, 0.03]), radius=0.055),
            Box(density=90.0, sh_rgb=tinted_sh([0.2, 0.7, 0.3], [0.8, 0.2, 0.2], axis=0),
                center=np.array([-0.055, -0.03, -0.02]),
                half_extents=np.array([0.05, 0.035, 0.065])),
            TorusShell(density=150.0, sh_rgb=tinted_sh([0.25, 0.35, 0.85], [0.3, 0.9, 0.4], axis=1),
                       center=np.array([-0.01, 0.065, -0.045]),
                       major_radius=0.045, tube_radius=0.018),
        ]
        domain = Cuboid3D(np.zeros(3), np.full(3, 0.16))
        return AnalyticScene(prims, domain)
    if name == "sym4":
        prims = [Box(density=100.0, sh_rgb=constant_sh([0.8, 0.75, 0.2]),
                     center=np.zeros(3), half_extents=np.array([0.03, 0.03, 0.07]))]
        for i in range(4):
            angle = i * np.pi / 2
            c = 0.08 * np.array([np.cos(angle), np.sin(angle), 0.0])
            prims.append(Sphere(density=140.0, sh_rgb=constant_sh([0.3, 0.5, 0.85]),
                                center=c, radius=0.035))
        domain = Cuboid3D(np.zeros(3), np.full(3, 0.14))
        syms = [Pose(rotation_about_z(i * np.pi / 2), np.zeros(3)) for i in range(4)]
        return AnalyticScene(prims, domain, symmetries=syms)
    raise ValueError(f"unknown stock scene {name!r} (choose asym3 or sym4)")


def reference_render(scene: AnalyticScene, pose: Pose, k: Intrinsics,
                     n: int, seed: int = 0, spp: int = 1) -> np.ndarray:
    """Oracle RGB render of an analytic scene, (H, W, 3) float32."""
    return render_image(scene, pose, k, spp=spp, n=n, seed=seed)[..., :3]


@dataclass
class SyntheticDataset:
    """In-memory posed image set plus ground truth for one object."""

    images: np.ndarray            # (V, H, W, 3) float32
    poses: list[Pose]             # camera-from-object, per view
    bboxes: list                  # BBox2D per view
    intrinsics: Intrinsics
    model_points: np.ndarray      # (N, 3) surface samples, meters
    diameter: float
    symmetries: list[Pose]
    background: np.ndarray
    content: Cuboid3D


def _tight_bbox(scene: AnalyticScene, pose: Pose, k: Intrinsics,
                alpha: np.ndarray):
    """Projected content-cuboid corner box tightened by the alpha mask."""
    from .geometry import BBox2D

    corners = scene.content_bounds().corners()
    uv = project(pose.apply(corners), k)
    x0, y0 = uv.min(axis=0)
    x1, y1 = uv.max(axis=0)
    ys, xs = np.nonzero(alpha > 0)
    if xs.size:
        # pixel (i, j) spans [j, j+1) x [i, i+1)
        x0 = max(x0, float(xs.min()))
        x1 = min(x1, float(xs.max()) + 1.0)
        y0 = max(y0, float(ys.min()))
        y1 = min(y1, float(ys.max()) + 1.0)
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, float(k.width)), min(y1, float(k.height))
    return BBox2D(x0, y0, x1, y1)


def make_dataset(scene: AnalyticScene, sampling: SphereSampling, k: Intrinsics,
                 seed: int = 0, n_samples: int = 96,
                 n_model_points: int = 512) -> SyntheticDataset:
    """Render a posed view set with ground-truth poses and tight bboxes."""
    target = scene.content_bounds().center
    poses = sphere_views(sampling, target)
    images = np.empty((len(poses), k.height, k.width, 3), dtype=np.float32)
    bboxes = []
    opts = RenderOptions(sample_block=0)
    for i, pose in enumerate(poses):
        rgba = render_image(scene, pose, k, spp=1, n=n_samples,
                            seed=seed + i, opts=opts)
        images[i] = rgba[..., :3]
        bboxes.append(_tight_bbox(scene, pose, k, rgba[..., 3]))
    pts = scene.model_points(n_model_points, seed=seed)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    return SyntheticDataset(
        images=images, poses=poses, bboxes=bboxes, intrinsics=k,
        model_points=pts, diameter=float(d.max()), symmetries=scene.symmetries,
        background=scene.background.copy(), content=scene.content_bounds())
