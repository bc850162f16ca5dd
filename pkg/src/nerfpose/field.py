"""Trainable radiance field: multiresolution grids + small decoder.

The field maps (3D point, unit view direction) to (density per meter,
RGB in [0,1]). Queries outside the domain, or outside an optional crop
cuboid, return exactly zero density. The decoder input is the
concatenated grid features plus a degree-2 spherical-harmonics encoding
of the view direction; density uses an exp activation clamped to
[0, 1e4], color a sigmoid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .encoding import SH_DIM, MultiresGrid, sh_basis
from .errors import DisjointCrop
from .geometry import Cuboid3D, cuboids_intersect

DENSITY_CLAMP = 1.0e4
# initial density-head bias; exp(-5) keeps a fresh field effectively empty
DENSITY_BIAS_INIT = -5.0

CHECKPOINT_MAGIC = b"NRFIELD1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FieldSpec:
    """Architecture of the grid encoder and decoder."""

    resolutions: tuple[int, ...] = (16, 32, 64, 128)
    features: int = 4
    hidden: int = 32
    grid_init_scale: float = 1e-4

    def __post_init__(self):
        if len(self.resolutions) == 0 or any(r < 2 for r in self.resolutions):
            raise ValueError("grid resolutions must be >= 2")
        if self.features < 1 or self.hidden < 1:
            raise ValueError("features and hidden width must be positive")


def _init_linear(out_dim: int, in_dim: int, generator: torch.Generator,
                 dtype) -> torch.nn.Linear:
    lin = torch.nn.Linear(in_dim, out_dim)
    bound = 1.0 / np.sqrt(in_dim)
    with torch.no_grad():
        w = (torch.rand((out_dim, in_dim), generator=generator) * 2 - 1) * bound
        b = (torch.rand((out_dim,), generator=generator) * 2 - 1) * bound
        lin.weight.copy_(w)
        lin.bias.copy_(b)
    return lin.to(dtype)


@dataclass
class OccupancyGrid:
    """Conservative boolean mask over the domain box for sample skipping."""

    mask: torch.Tensor  # (res, res, res) bool, indexed [iz, iy, ix]
    lo: np.ndarray
    hi: np.ndarray

    def lookup(self, x: torch.Tensor) -> torch.Tensor:
        """Occupancy flags for points (N, 3); out-of-box counts as empty."""
        res = self.mask.shape[0]
        lo = torch.as_tensor(self.lo, dtype=x.dtype)
        hi = torch.as_tensor(self.hi, dtype=x.dtype)
        u = (x - lo) / (hi - lo)
        idx = (u * res).long().clamp_(0, res - 1)
        flat = (idx[:, 2] * res + idx[:, 1]) * res + idx[:, 0]
        inside = ((u >= 0) & (u < 1)).all(dim=1)
        return self.mask.view(-1)[flat] & inside


class RadianceField(torch.nn.Module):
    """Grid-backed radiance field over an axis-aligned domain cuboid."""

    def __init__(self, domain: Cuboid3D, spec: FieldSpec = FieldSpec(),
                 background=(0.0, 0.0, 0.0), seed: int = 0,
                 dtype=torch.float32):
        super().__init__()
        if np.any(domain.half_extents <= 0):
            raise ValueError("field domain must have positive extent")
        if np.abs(domain.orientation - np.eye(3)).max() > 1e-12:
            raise ValueError("field domain must be axis-aligned")
        self.domain = domain
        self.crop: Cuboid3D | None = None
        self.background = np.clip(np.asarray(background, dtype=np.float64), 0.0, 1.0)
        self.spec = spec
        self.dtype = dtype
        self.occupancy: OccupancyGrid | None = None

        gen = torch.Generator().manual_seed(int(seed))
        self.grid = MultiresGrid(spec.resolutions, spec.features,
                                 spec.grid_init_scale, gen, dtype)
        in_dim = self.grid.out_dim + SH_DIM
        self.layer1 = _init_linear(spec.hidden, in_dim, gen, dtype)
        self.layer2 = _init_linear(spec.hidden, spec.hidden, gen, dtype)
        self.head = _init_linear(4, spec.hidden, gen, dtype)
        with torch.no_grad():
            self.head.bias[0] = DENSITY_BIAS_INIT

        lo = domain.center - domain.half_extents
        hi = domain.center + domain.half_extents
        self._lo = torch.tensor(lo, dtype=dtype)
        self._scale = torch.tensor(2.0 / (hi - lo), dtype=dtype)
        self._crop_center_t = None
        self._crop_rot_t = None
        self._crop_half_t = None

    # -- querying ---------------------------------------------------------

    def _inside(self, x: torch.Tensor) -> torch.Tensor:
        """Float mask: 1 inside domain (and crop, if set), else 0."""
        xn = (x - self._lo) * self._scale - 1.0
        ok = (xn.abs() <= 1.0).all(dim=1)
        if self.crop is not None:
            local = (x - self._crop_center_t) @ self._crop_rot_t
            ok = ok & (local.abs() <= self._crop_half_t).all(dim=1)
        return ok.to(x.dtype)

    def query_batch(self, x: torch.Tensor, d: torch.Tensor):
        """Density and color for points x (N, 3) and unit directions d (N, 3)."""
        x = x.to(self.dtype)
        d = d.to(self.dtype)
        xn = ((x - self._lo) * self._scale - 1.0).clamp(-1.0, 1.0)
        feats = self.grid(xn)
        h = torch.cat([feats, sh_basis(d)], dim=1)
        h = torch.relu(self.layer1(h))
        h = torch.relu(self.layer2(h))
        out = self.head(h)
        sigma = torch.clamp(torch.exp(out[:, 0]), max=DENSITY_CLAMP)
        rgb = torch.sigmoid(out[:, 1:4])
        sigma = sigma * self._inside(x)
        return sigma, rgb

    # -- domain cropping ----------------------------------------------------

    def crop_domain(self, c: Cuboid3D) -> "RadianceField":
        """Field sharing this one's parameters with density zeroed outside c."""
        if np.any(c.half_extents <= 0) or not cuboids_intersect(c, self.domain):
            raise DisjointCrop("crop cuboid does not intersect the field domain")
        out = RadianceField.__new__(RadianceField)
        torch.nn.Module.__init__(out)
        out.domain = self.domain
        out.background = self.background.copy()
        out.spec = self.spec
        out.dtype = self.dtype
        out.occupancy = None
        # parameter-owning modules are shared, not copied
        out.grid = self.grid
        out.layer1, out.layer2, out.head = self.layer1, self.layer2, self.head
        out._lo = self._lo
        out._scale = self._scale
        out.crop = c
        out._crop_center_t = torch.tensor(c.center, dtype=self.dtype)
        out._crop_rot_t = torch.tensor(c.orientation, dtype=self.dtype)
        out._crop_half_t = torch.tensor(c.half_extents, dtype=self.dtype)
        return out

    @property
    def content_cuboid(self) -> Cuboid3D:
        """Region assumed to contain the object: crop if set, else domain."""
        return self.crop if self.crop is not None else self.domain

    # -- occupancy baking ---------------------------------------------------

    PROBE_DIRS = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1],
         [1, 1, 1], [-1, 1, -1], [1, -1, -1], [-1, -1, 1]], dtype=np.float64)

    def bake_occupancy(self, res: int = 64, threshold: float = 0.05,
                       dilate: int = 1, chunk: int = 1 << 19):
        """Bake a conservative empty-space mask for fast hypothesis renders.

        Density is probed on a (res+1)^3 corner lattice over the domain
        for several view directions; a voxel is occupied when any probe
        exceeds the threshold, then the mask is dilated. Approximate by
        construction (kept conservative via low threshold + dilation);
        only consulted when rendering with use_occupancy enabled.
        """
        lo = self.domain.center - self.domain.half_extents
        hi = self.domain.center + self.domain.half_extents
        axes = [torch.linspace(float(lo[i]), float(hi[i]), res + 1) for i in range(3)]
        zz, yy, xx = torch.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
        pts = torch.stack([xx, yy, zz], dim=-1).view(-1, 3)
        corner_max = torch.zeros(pts.shape[0])
        dirs = self.PROBE_DIRS / np.linalg.norm(self.PROBE_DIRS, axis=1, keepdims=True)
        with torch.no_grad():
            for pd in dirs:
                d = torch.tensor(pd, dtype=torch.float32).expand(pts.shape[0], 3)
                for s in range(0, pts.shape[0], chunk):
                    sl = slice(s, s + chunk)
                    sigma, _ = self.query_batch(pts[sl], d[sl])
                    corner_max[sl] = torch.maximum(corner_max[sl], sigma.float())
        corner_max = corner_max.view(res + 1, res + 1, res + 1)
        # voxel is occupied if any of its 8 corners is
        vox = corner_max
        for dim in range(3):
            a = vox.narrow(dim, 0, res)
            b = vox.narrow(dim, 1, res)
            vox = torch.maximum(a, b)
        occ = vox > threshold
        for _ in range(max(0, dilate)):
            occ = torch.nn.functional.max_pool3d(
                occ[None, None].float(), 3, stride=1, padding=1)[0, 0] > 0
        self.occupancy = OccupancyGrid(occ, lo, hi)
        return self.occupancy


# -- module-level query convenience ------------------------------------------


def query(f: RadianceField, x, d):
    """Single-point query: returns (sigma, rgb) as floats/numpy."""
    xt = torch.as_tensor(np.asarray(x, dtype=np.float32)).view(1, 3)
    dt = torch.as_tensor(np.asarray(d, dtype=np.float32)).view(1, 3)
    with torch.no_grad():
        sigma, rgb = f.query_batch(xt, dt)
    return float(sigma[0]), rgb[0].double().numpy()


# -- checkpoint I/O -----------------------------------------------------------


def _pack_cuboid(c: Cuboid3D) -> bytes:
    return struct.pack("<15d", *c.center, *c.half_extents,
                       *c.orientation.reshape(-1))


def _unpack_cuboid(buf: bytes) -> Cuboid3D:
    v = struct.unpack("<15d", buf)
    return Cuboid3D(np.array(v[0:3]), np.array(v[3:6]),
                    np.array(v[6:15]).reshape(3, 3))


def save_field(f: RadianceField, path) -> None:
    """Versioned binary checkpoint; parameters as little-endian float32."""
    spec = f.spec
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(spec.resolutions)))
        fh.write(struct.pack(f"<{len(spec.resolutions)}I", *spec.resolutions))
        fh.write(struct.pack("<II", spec.features, spec.hidden))
        fh.write(struct.pack("<d", spec.grid_init_scale))
        fh.write(_pack_cuboid(f.domain))
        fh.write(struct.pack("<3d", *f.background))
        fh.write(struct.pack("<B", 1 if f.crop is not None else 0))
        if f.crop is not None:
            fh.write(_pack_cuboid(f.crop))
        for p in _param_sequence(f):
            data = p.detach().to(torch.float32).numpy()
            fh.write(data.astype("<f4").tobytes())


def _param_sequence(f: RadianceField):
    for g in f.grid.grids:
        yield g
    for lin in (f.layer1, f.layer2, f.head):
        yield lin.weight
        yield lin.bias


def load_field(path) -> RadianceField:
    """Load a checkpoint written by save_field."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a field checkpoint (bad magic {magic!r})")
        version, n_levels = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        resolutions = struct.unpack(f"<{n_levels}I", fh.read(4 * n_levels))
        features, hidden = struct.unpack("<II", fh.read(8))
        (init_scale,) = struct.unpack("<d", fh.read(8))
        domain = _unpack_cuboid(fh.read(15 * 8))
        background = struct.unpack("<3d", fh.read(24))
        (has_crop,) = struct.unpack("<B", fh.read(1))
        crop = _unpack_cuboid(fh.read(15 * 8)) if has_crop else None
        spec = FieldSpec(tuple(resolutions), features, hidden, init_scale)
        field = RadianceField(domain, spec, background)
        with torch.no_grad():
            for p in _param_sequence(field):
                n = p.numel()
                raw = fh.read(4 * n)
                if len(raw) != 4 * n:
                    raise ValueError(f"{path}: truncated parameter block")
                vals = np.frombuffer(raw, dtype="<f4").reshape(tuple(p.shape))
                p.copy_(torch.from_numpy(vals.copy()))
        trailing = fh.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after parameters")
    if crop is not None:
        field = field.crop_domain(crop)
    return field
