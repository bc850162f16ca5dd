"""Volume-rendering quadrature shared by the field and the analytic oracle.

Any "radiance source" exposing query_batch(x, d) -> (sigma, rgb) plus
domain/crop/background attributes renders through the same path, so the
oracle renderer and the trained field cannot drift apart numerically.

Per ray: stratified samples t_i over the ray's intersection with the
source's bounding cuboid(s); alpha_i = 1 - exp(-sigma_i * delta_i);
transmittance T_i = prod_{j<i}(1 - alpha_j); the pixel color is
sum_i T_i alpha_i c_i + T_final * background and alpha = 1 - T_final.
Compositing runs in float64 so sum(w) + T_final = 1 holds to 1e-9.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .geometry import Cuboid3D, Intrinsics, Pose, Ray, pixel_rays


@dataclass(frozen=True)
class RenderOptions:
    """Quadrature and acceleration knobs for image rendering."""

    n_samples: int = 64
    spp: int = 1
    jitter: bool = True
    early_stop: float = 0.0      # drop rays once T falls below this; 0 = off
    use_occupancy: bool = False  # consult src.occupancy to skip empty samples
    sample_block: int = 16       # samples processed per block along the ray
    chunk_rays: int = 65536

    def __post_init__(self):
        if self.n_samples < 1 or self.spp < 1:
            raise ValueError("n_samples and spp must be >= 1")


def ray_cuboid_range(origins: np.ndarray, dirs: np.ndarray, box: Cuboid3D,
                     near: float, far: float):
    """Clip rays to an oriented cuboid: entry/exit distances and hit mask."""
    o = (origins - box.center) @ box.orientation
    d = dirs @ box.orientation
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(np.abs(d) > 1e-12, 1.0 / d, np.inf)
    t1 = (-box.half_extents - o) * inv
    t2 = (box.half_extents - o) * inv
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    # axis-parallel rays: inside the slab -> (-inf, inf), outside -> miss
    par = np.abs(d) <= 1e-12
    out = par & (np.abs(o) > box.half_extents)
    lo[par] = -np.inf
    hi[par] = np.inf
    lo[out] = np.inf
    hi[out] = -np.inf
    t0 = np.maximum(lo.max(axis=-1), near)
    t3 = np.minimum(hi.min(axis=-1), far)
    return t0, t3, t0 < t3


def source_bounds(src) -> list[Cuboid3D]:
    boxes = [src.domain]
    if getattr(src, "crop", None) is not None:
        boxes.append(src.crop)
    return boxes


def composite_block(sigma: torch.Tensor, rgb: torch.Tensor, delta: torch.Tensor,
                    t_init: torch.Tensor):
    """One quadrature block: weights, color contribution, updated T.

    sigma/delta (R, B) and rgb (R, B, 3) in float64; t_init (R,) is the
    transmittance accumulated before this block.
    """
    alpha = 1.0 - torch.exp(-sigma * delta)
    trans = torch.cumprod(1.0 - alpha, dim=1)
    t_before = torch.cat([t_init[:, None], t_init[:, None] * trans[:, :-1]], dim=1)
    weights = t_before * alpha
    contribution = (weights.unsqueeze(-1) * rgb).sum(dim=1)
    return weights, contribution, t_init * trans[:, -1]


def render_sample_batch(src, origins: torch.Tensor, dirs: torch.Tensor,
                        t0: torch.Tensor, t1: torch.Tensor, n: int,
                        jitter_u: torch.Tensor | None,
                        early_stop: float = 0.0, use_occupancy: bool = False,
                        sample_block: int = 0, keep_weights: bool = False):
    """Differentiable core: march n stratified samples along each ray.

    origins/dirs (R, 3) float64 torch; t0/t1 (R,) float64; jitter_u is
    (R, n) in [0,1) or None for midpoint sampling. Returns float64
    (rgb (R, 3) without background, t_final (R,), weights or None).
    """
    n_rays = origins.shape[0]
    width = ((t1 - t0) / n).unsqueeze(1)  # (R, 1)
    offs = jitter_u if jitter_u is not None else torch.full(
        (n_rays, n), 0.5, dtype=torch.float64)
    ts = t0.unsqueeze(1) + (torch.arange(n, dtype=torch.float64) + offs) * width
    delta = width.expand(n_rays, n)

    occ = getattr(src, "occupancy", None) if use_occupancy else None

    def query_block(x_flat, d_flat):
        if occ is not None:
            live = occ.lookup(x_flat)
            sigma_flat = torch.zeros(x_flat.shape[0], dtype=torch.float64)
            rgb_flat = torch.zeros((x_flat.shape[0], 3), dtype=torch.float64)
            if live.any():
                sig, col = src.query_batch(x_flat[live], d_flat[live])
                sigma_flat[live] = sig.double()
                rgb_flat[live] = col.double()
            return sigma_flat, rgb_flat
        sig, col = src.query_batch(x_flat, d_flat)
        return sig.double(), col.double()

    block = sample_block if 0 < sample_block < n else n
    weights_acc = torch.zeros((n_rays, n), dtype=torch.float64) if keep_weights else None

    if early_stop <= 0.0:
        # functional path (used by training): plain slices, no gathers
        t_run = torch.ones(n_rays, dtype=torch.float64)
        rgb_acc = torch.zeros((n_rays, 3), dtype=torch.float64)
        for s in range(0, n, block):
            b = min(block, n - s)
            x = origins.unsqueeze(1) + ts[:, s:s + b].unsqueeze(-1) * dirs.unsqueeze(1)
            d_flat = dirs.unsqueeze(1).expand(-1, b, -1).reshape(-1, 3).to(torch.float32)
            sigma_flat, rgb_flat = query_block(x.reshape(-1, 3).to(torch.float32), d_flat)
            w_b, contrib, t_run = composite_block(
                sigma_flat.view(-1, b), rgb_flat.view(-1, b, 3),
                delta[:, s:s + b], t_run)
            rgb_acc = rgb_acc + contrib
            if keep_weights:
                weights_acc[:, s:s + b] = w_b.detach()
        return rgb_acc, t_run, weights_acc

    # early-termination path: compact the alive rays between blocks
    t_run = torch.ones(n_rays, dtype=torch.float64)
    rgb_acc = torch.zeros((n_rays, 3), dtype=torch.float64)
    alive = torch.arange(n_rays)
    for s in range(0, n, block):
        keep = t_run[alive] > early_stop
        alive = alive[keep]
        if alive.numel() == 0:
            break
        b = min(block, n - s)
        ts_b = ts[alive, s:s + b]
        x = origins[alive].unsqueeze(1) + ts_b.unsqueeze(-1) * dirs[alive].unsqueeze(1)
        d_flat = dirs[alive].unsqueeze(1).expand(-1, b, -1).reshape(-1, 3).to(torch.float32)
        sigma_flat, rgb_flat = query_block(x.reshape(-1, 3).to(torch.float32), d_flat)
        w_b, contrib, t_new = composite_block(
            sigma_flat.view(-1, b), rgb_flat.view(-1, b, 3),
            delta[alive, s:s + b], t_run[alive])
        rgb_acc.index_add_(0, alive, contrib)
        if keep_weights:
            weights_acc[alive, s:s + b] = w_b
        t_run.index_copy_(0, alive, t_new)

    return rgb_acc, t_run, weights_acc


def _clip_rays(src, origins: np.ndarray, dirs: np.ndarray, near: float, far: float):
    t0 = np.full(origins.shape[0], near)
    t1 = np.full(origins.shape[0], far)
    hit = np.ones(origins.shape[0], dtype=bool)
    for box in source_bounds(src):
        b0, b1, bh = ray_cuboid_range(origins, dirs, box, near, far)
        t0 = np.maximum(t0, b0)
        t1 = np.minimum(t1, b1)
        hit &= bh
    hit &= t0 < t1
    return t0, t1, hit


def render_rays(src, origins: np.ndarray, dirs: np.ndarray, near: float,
                far: float, opts: RenderOptions, generator: torch.Generator,
                keep_weights: bool = False):
    """Render a flat batch of rays; returns float64 (rgb (R,3), alpha (R,), aux).

    spp > 1 averages independently jittered quadrature evaluations of
    the same ray. aux carries per-sample weights and final transmittance
    when keep_weights is set (only for spp == 1).
    """
    n_rays = origins.shape[0]
    bg = torch.from_numpy(np.asarray(src.background, dtype=np.float64))
    t0_np, t1_np, hit = _clip_rays(src, origins, dirs, near, far)

    rgb_out = np.tile(src.background, (n_rays, 1)).astype(np.float64)
    alpha_out = np.zeros(n_rays)
    aux = None
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return rgb_out, alpha_out, aux

    o_t = torch.from_numpy(origins[idx])
    d_t = torch.from_numpy(dirs[idx])
    t0 = torch.from_numpy(t0_np[idx])
    t1 = torch.from_numpy(t1_np[idx])
    rgb_sum = torch.zeros((idx.size, 3), dtype=torch.float64)
    alpha_sum = torch.zeros(idx.size, dtype=torch.float64)
    for _ in range(opts.spp):
        u = (torch.rand((idx.size, opts.n_samples), generator=generator,
                        dtype=torch.float64) if opts.jitter else None)
        rgb_i, t_fin, w = render_sample_batch(
            src, o_t, d_t, t0, t1, opts.n_samples, u,
            early_stop=opts.early_stop, use_occupancy=opts.use_occupancy,
            sample_block=opts.sample_block, keep_weights=keep_weights)
        rgb_sum += rgb_i + t_fin[:, None] * bg
        alpha_sum += 1.0 - t_fin
        if keep_weights and opts.spp == 1:
            aux = (w.numpy(), t_fin.numpy())
    rgb_out[idx] = (rgb_sum / opts.spp).numpy()
    alpha_out[idx] = (alpha_sum / opts.spp).numpy()
    return rgb_out, alpha_out, aux


def render_ray(src, ray: Ray, n: int, jitter: bool = True, seed: int = 0,
               keep_weights: bool = False):
    """Render a single ray: (rgb (3,), alpha) plus optional weight aux."""
    gen = torch.Generator().manual_seed(int(seed))
    opts = RenderOptions(n_samples=n, spp=1, jitter=jitter, sample_block=0)
    with torch.no_grad():
        rgb, alpha, aux = render_rays(src, ray.origin[None], ray.direction[None],
                                      ray.near, ray.far, opts, gen,
                                      keep_weights=keep_weights)
    if keep_weights:
        return rgb[0], float(alpha[0]), aux
    return rgb[0], float(alpha[0])


def auto_near_far(src, pose: Pose) -> tuple[float, float]:
    """Conservative near/far bracketing the source domain from the camera."""
    box = src.domain
    dist = float(np.linalg.norm(pose.camera_center - box.center))
    radius = box.diagonal / 2.0
    near = max(1e-4, dist - radius * 1.5)
    far = dist + radius * 1.5
    return near, far


def render_image(src, pose: Pose, k: Intrinsics, spp: int = 1, n: int = 64,
                 seed: int = 0, jitter: bool = True,
                 opts: RenderOptions | None = None) -> np.ndarray:
    """Render an RGBA image (H, W, 4) float32 for a camera-from-source pose."""
    if opts is None:
        opts = RenderOptions(n_samples=n, spp=spp, jitter=jitter)
    else:
        opts = replace(opts, n_samples=n, spp=spp, jitter=jitter)
    near, far = auto_near_far(src, pose)
    grid = pixel_rays(pose, k, near, far)
    origins = grid.origins.reshape(-1, 3)
    dirs = grid.directions.reshape(-1, 3)
    gen = torch.Generator().manual_seed(int(seed))
    out = np.empty((k.height * k.width, 4), dtype=np.float64)
    with torch.no_grad():
        for s in range(0, origins.shape[0], opts.chunk_rays):
            sl = slice(s, s + opts.chunk_rays)
            rgb, alpha, _ = render_rays(src, origins[sl], dirs[sl], near, far,
                                        opts, gen)
            out[sl, :3] = rgb
            out[sl, 3] = alpha
    return out.reshape(k.height, k.width, 4).astype(np.float32)


def render_poses(src, poses: list[Pose], k: Intrinsics, spp: int, n: int,
                 seed: int, opts: RenderOptions | None = None,
                 seed_stride: int = 1) -> np.ndarray:
    """Render many poses, (P, H, W, 4) float32; pose i uses seed + i*stride.

    Used for hypothesis batches; per-pose results match render_image
    with the same options and derived seed. A zero stride gives every
    pose the same jitter pattern, which removes sampling noise from
    score comparisons between the renders.
    """
    if opts is None:
        opts = RenderOptions()
    opts = replace(opts, n_samples=n, spp=spp)
    out = np.empty((len(poses), k.height, k.width, 4), dtype=np.float32)
    for i, pose in enumerate(poses):
        out[i] = render_image(src, pose, k, spp=spp, n=n,
                              seed=seed + i * seed_stride,
                              jitter=opts.jitter, opts=opts)
    return out
