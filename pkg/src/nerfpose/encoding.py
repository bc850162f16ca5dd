"""Multiresolution dense feature grids and direction encoding."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

# real spherical-harmonics constants, degrees 0..2 (9 basis functions)
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
         1.0925484305920792, 0.5462742152960396)

SH_DIM = 9


def sh_basis(dirs: torch.Tensor) -> torch.Tensor:
    """Degree-2 real spherical harmonics of unit directions, shape (N, 9)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    return torch.stack([
        torch.full_like(x, SH_C0),
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        -SH_C2[1] * y * z,
        SH_C2[2] * (3.0 * z * z - 1.0),
        -SH_C2[3] * x * z,
        SH_C2[4] * (x * x - y * y),
    ], dim=-1)


def sh_basis_np(dirs: np.ndarray) -> np.ndarray:
    """Numpy twin of sh_basis for analytic scene colors."""
    return sh_basis(torch.from_numpy(np.ascontiguousarray(dirs, dtype=np.float64))).numpy()


class MultiresGrid(torch.nn.Module):
    """Stack of dense trilinear feature grids at increasing resolutions.

    Query coordinates are normalized to [-1, 1]^3 over the field domain;
    grid_sample with align_corners places grid nodes on the domain
    boundary. Features from all levels are concatenated.
    """

    def __init__(self, resolutions, features: int, init_scale: float,
                 generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        self.resolutions = tuple(int(r) for r in resolutions)
        self.features = int(features)
        grids = []
        for r in self.resolutions:
            g = (torch.rand((1, features, r, r, r), generator=generator,
                            dtype=torch.float32) * 2.0 - 1.0) * init_scale
            grids.append(torch.nn.Parameter(g.to(dtype)))
        self.grids = torch.nn.ParameterList(grids)

    @property
    def out_dim(self) -> int:
        return self.features * len(self.resolutions)

    def forward(self, x_norm: torch.Tensor) -> torch.Tensor:
        pts = x_norm.view(1, -1, 1, 1, 3)
        feats = [
            F.grid_sample(g, pts.to(g.dtype), mode="bilinear",
                          padding_mode="border", align_corners=True)
            .view(self.features, -1)
            for g in self.grids
        ]
        return torch.cat(feats, dim=0).T
