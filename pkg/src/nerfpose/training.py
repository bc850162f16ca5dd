"""Photometric training of a radiance field from posed RGB images."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .errors import InsufficientViews, NonFiniteLoss
from .field import FieldSpec, RadianceField
from .geometry import Cuboid3D, Intrinsics, Pose, pixel_rays
from .rendering import RenderOptions, _clip_rays, render_image, render_sample_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    rays_per_batch: int = 1024
    learning_rate: float = 2e-2
    lr_decay: float = 0.1          # final lr as a fraction of the initial
    samples_per_ray: int = 32
    seed: int = 0

    def __post_init__(self):
        for name in ("iterations", "rays_per_batch", "learning_rate",
                     "lr_decay", "samples_per_ray"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainResult:
    field: RadianceField
    log: list = dc_field(default_factory=list)  # (iteration, loss, psnr) tuples

    @property
    def final_psnr(self) -> float:
        return self.log[-1][2] if self.log else float("nan")


def psnr(mse: float) -> float:
    if mse <= 0:
        return float("inf")
    return -10.0 * np.log10(mse)


def _flatten_rays(images, poses, k: Intrinsics, domain: Cuboid3D):
    """Stack per-pixel rays/targets of all views, keeping domain hits only.

    Rays that miss the domain box can never receive gradient (density is
    zero along them), so they are excluded from the sampling pool.
    """
    origins, dirs, t0s, t1s, targets = [], [], [], [], []

    class _Probe:
        pass

    probe = _Probe()
    probe.domain = domain
    probe.crop = None
    for img, pose in zip(images, poses):
        near = 1e-4
        far = float(np.linalg.norm(pose.camera_center - domain.center)
                    + domain.diagonal)
        grid = pixel_rays(pose, k, near, far)
        o = grid.origins.reshape(-1, 3)
        d = grid.directions.reshape(-1, 3)
        t0, t1, hit = _clip_rays(probe, o, d, near, far)
        origins.append(o[hit])
        dirs.append(d[hit])
        t0s.append(t0[hit])
        t1s.append(t1[hit])
        targets.append(np.asarray(img, dtype=np.float64).reshape(-1, 3)[hit])
    return (torch.from_numpy(np.concatenate(origins)),
            torch.from_numpy(np.concatenate(dirs)),
            torch.from_numpy(np.concatenate(t0s)),
            torch.from_numpy(np.concatenate(t1s)),
            torch.from_numpy(np.concatenate(targets)))


def _make_optimizer(params, lr: float):
    try:
        return torch.optim.Adam(params, lr=lr, fused=True)
    except (RuntimeError, ValueError):  # fused unsupported on this build
        return torch.optim.Adam(params, lr=lr)


def train(images, poses: list[Pose], k: Intrinsics, domain: Cuboid3D,
          cfg: TrainConfig = TrainConfig(), spec: FieldSpec = FieldSpec(),
          background=(0.0, 0.0, 0.0), log_every: int = 100,
          log_fn=None) -> TrainResult:
    """Fit a radiance field to posed RGB images by MSE on sampled rays.

    Gradient steps use Adam with an exponential learning-rate schedule.
    The returned log holds (iteration, loss, psnr) entries; the final
    entry reports the PSNR of full re-renders of training views.
    """
    images = [np.asarray(im, dtype=np.float32) for im in images]
    if len(images) < 2:
        raise InsufficientViews(f"need at least 2 views, got {len(images)}")
    if len(images) != len(poses):
        raise ValueError("images and poses length mismatch")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ValueError("all images must share one resolution")
    if shape[0] != k.height or shape[1] != k.width:
        raise ValueError("images do not match the intrinsics size")

    f = RadianceField(domain, spec, background, seed=cfg.seed)
    origins, dirs, t0, t1, targets = _flatten_rays(images, poses, k, domain)
    pool = origins.shape[0]
    if pool == 0:
        raise InsufficientViews("no ray intersects the domain")

    gen = torch.Generator().manual_seed(int(cfg.seed) + 1)
    opt = _make_optimizer(f.parameters(), cfg.learning_rate)
    bg = torch.from_numpy(f.background)
    log: list[tuple[int, float, float]] = []

    for it in range(cfg.iterations):
        frac = it / max(cfg.iterations - 1, 1)
        lr = cfg.learning_rate * (cfg.lr_decay ** frac)
        for group in opt.param_groups:
            group["lr"] = lr

        idx = torch.randint(0, pool, (cfg.rays_per_batch,), generator=gen)
        u = torch.rand((cfg.rays_per_batch, cfg.samples_per_ray),
                       generator=gen, dtype=torch.float64)
        rgb, t_fin, _ = render_sample_batch(
            f, origins[idx], dirs[idx], t0[idx], t1[idx],
            cfg.samples_per_ray, u)
        pred = rgb + t_fin[:, None] * bg
        loss = ((pred - targets[idx]) ** 2).mean()
        loss_val = float(loss.detach())
        if not np.isfinite(loss_val):
            raise NonFiniteLoss(
                f"loss {loss_val} at iteration {it} (lr {lr:.3g}); "
                "reduce the learning rate")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

        if (it + 1) % log_every == 0 or it == 0:
            entry = (it + 1, loss_val, psnr(loss_val))
            log.append(entry)
            if log_fn is not None:
                log_fn(*entry)

    final = rerender_psnr(f, images, poses, k, max_views=4)
    final_mse = float(10.0 ** (-final / 10.0))
    log.append((cfg.iterations, final_mse, final))
    if log_fn is not None:
        log_fn(cfg.iterations, final_mse, final)
    return TrainResult(f, log)


def rerender_psnr(src, images, poses, k: Intrinsics, max_views: int = 4,
                  n: int = 64, opts: RenderOptions | None = None) -> float:
    """PSNR of deterministic full re-renders against reference images."""
    step = max(1, len(images) // max_views)
    take = list(range(0, len(images), step))[:max_views]
    mses = []
    for i in take:
        rendered = render_image(src, poses[i], k, spp=1, n=n, jitter=False,
                                opts=opts)
        ref = np.asarray(images[i], dtype=np.float64)
        mses.append(float(((rendered[..., :3] - ref) ** 2).mean()))
    return psnr(float(np.mean(mses)))
