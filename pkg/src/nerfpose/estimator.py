"""Render-and-compare pose estimation: coarse hypothesis ranking plus
iterative perturbation refinement.

The coarse stage renders 104 hypothesis views (26 cube stations x 4
in-plane rotations) of the object's radiance field and ranks them by a
masked similarity score against the observed crop. The best hypothesis
is then refined by seeded Gaussian perturbations of rotation and
translation with a shrinking search radius, always keeping the
incumbent, so the score never decreases.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateBBox,
    DimensionMismatch,
    EmptyMask,
    EstimationFailed,
)
from .field import RadianceField
from .geometry import (
    BBox2D,
    Intrinsics,
    Pose,
    orthonormalize,
    random_rotation,
    rotation_drift,
    rotation_from_axis_angle,
)
from .rendering import RenderOptions, render_image, render_poses
from .sampling import adjust_distance, cube_cameras, quadruplets, rig_from_initial

INITIAL_DISTANCE_M = 1.0
CROP_PAD = 1.1  # square crop side relative to the larger bbox extent


@dataclass(frozen=True)
class Observation:
    """One query: RGB image, detection bbox, intrinsics, object id."""

    image: np.ndarray
    bbox: BBox2D
    intrinsics: Intrinsics
    object_id: int = 0


@dataclass(frozen=True)
class Hypothesis:
    pose: Pose
    score: float
    render: np.ndarray | None = None


@dataclass(frozen=True)
class ScorerSpec:
    """Masked zero-mean NCC plus a gradient-orientation agreement term.

    variant "color" correlates each RGB channel and averages (default;
    distinguishes parts that differ in hue but not brightness), variant
    "luminance" correlates the luma channel only. The gradient term is
    always computed on luminance.
    """

    variant: str = "color"
    grad_weight: float = 0.5
    mask_threshold: float = 0.5

    def __post_init__(self):
        if self.variant not in ("color", "luminance"):
            raise ValueError(f"unknown scorer variant {self.variant!r}")
        if self.grad_weight < 0:
            raise ValueError("grad_weight must be >= 0")


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 3
    candidates: int = 64
    sigma_rot: float = np.radians(12.0)
    sigma_trans: float = 0.02     # fraction of object diameter
    decay: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.candidates < 2:
            raise ValueError("candidates must be >= 2")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")


@dataclass(frozen=True)
class EstimatorConfig:
    """Rendering configuration of the estimation pipeline."""

    side: int = 128
    spp: int = 4
    n_samples: int = 16
    use_occupancy: bool = True
    early_stop: float = 1e-4
    sample_block: int = 8
    depth_fit_iters: int = 3
    mask_alpha: float = 0.5

    def render_options(self) -> RenderOptions:
        return RenderOptions(n_samples=self.n_samples, spp=self.spp,
                             early_stop=self.early_stop,
                             use_occupancy=self.use_occupancy,
                             sample_block=self.sample_block)


# -- observation cropping -----------------------------------------------------


def _crop_params(bbox: BBox2D, side: int):
    size = max(bbox.width, bbox.height) * CROP_PAD
    cx, cy = bbox.center
    scale = side / size
    x0 = cx - size / 2.0
    y0 = cy - size / 2.0
    return x0, y0, scale


def crop_and_resize(obs: Observation, side: int):
    """Square crop around the bbox (10% padding) resampled to side x side.

    Returns (crop, intrinsics); the intrinsics describe the crop's
    virtual camera exactly, so projections stay consistent with the
    original image up to the affine pixel map.
    """
    if bbox_area(obs.bbox) <= 0:
        raise DegenerateBBox(f"bbox {obs.bbox} has no area")
    x0, y0, scale = _crop_params(obs.bbox, side)
    k = obs.intrinsics
    adjusted = Intrinsics(fx=k.fx * scale, fy=k.fy * scale,
                          cx=(k.cx - x0) * scale, cy=(k.cy - y0) * scale,
                          width=side, height=side)
    # source pixel-center coordinates of each output pixel center
    out_idx = np.arange(side) + 0.5
    u = x0 + out_idx / scale - 0.5
    v = y0 + out_idx / scale - 0.5
    vv, uu = np.meshgrid(v, u, indexing="ij")
    img = np.asarray(obs.image, dtype=np.float32)
    crop = np.stack([
        ndimage.map_coordinates(img[..., c], [vv, uu], order=1, mode="nearest")
        for c in range(img.shape[-1])
    ], axis=-1)
    return crop.astype(np.float32), adjusted


def bbox_area(bbox: BBox2D) -> float:
    return max(bbox.width, 0.0) * max(bbox.height, 0.0)


def crop_bbox(obs: Observation, side: int) -> BBox2D:
    """The observation bbox expressed in crop pixel coordinates."""
    x0, y0, scale = _crop_params(obs.bbox, side)
    return BBox2D((obs.bbox.x_min - x0) * scale, (obs.bbox.y_min - y0) * scale,
                  (obs.bbox.x_max - x0) * scale, (obs.bbox.y_max - y0) * scale)


# -- similarity scoring -------------------------------------------------------


def luminance(rgb: np.ndarray) -> np.ndarray:
    return (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2])


def masked_zncc(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation over masked pixels, in [-1, 1].

    Returns 0 when either side has (near) zero variance, since constant
    patches carry no correlation evidence.
    """
    av = a[mask].astype(np.float64)
    bv = b[mask].astype(np.float64)
    az = av - av.mean()
    bz = bv - bv.mean()
    denom = np.sqrt((az * az).sum() * (bz * bz).sum())
    if denom < 1e-12:
        return 0.0
    return float(np.clip((az * bz).sum() / denom, -1.0, 1.0))


def gradient_agreement(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Magnitude-weighted squared-cosine agreement of gradient directions.

    In [0, 1]; 1 when edges align everywhere. Uses central differences
    and only interior mask pixels so boundary gradients do not leak in.
    """
    gay, gax = np.gradient(a.astype(np.float64))
    gby, gbx = np.gradient(b.astype(np.float64))
    interior = ndimage.binary_erosion(mask, np.ones((3, 3)))
    if not interior.any():
        return 0.0
    ax_, ay_ = gax[interior], gay[interior]
    bx_, by_ = gbx[interior], gby[interior]
    na = np.hypot(ax_, ay_)
    nb = np.hypot(bx_, by_)
    dot = ax_ * bx_ + ay_ * by_
    weight = na * nb
    wsum = weight.sum()
    if wsum < 1e-12:
        return 0.0
    cos2 = np.zeros_like(dot)
    ok = weight > 1e-12
    cos2[ok] = (dot[ok] / weight[ok]) ** 2
    return float((weight * cos2).sum() / wsum)


def score(s: ScorerSpec, rendered: np.ndarray, observed: np.ndarray) -> float:
    """Similarity of a rendered RGBA hypothesis to the observed RGB crop.

    Masked by rendered alpha; range [-1, 1 + grad_weight]. Symmetric in
    the two images' contents (the mask always comes from the render).
    """
    if rendered.shape[:2] != observed.shape[:2]:
        raise DimensionMismatch(
            f"render {rendered.shape[:2]} vs observation {observed.shape[:2]}")
    if rendered.shape[-1] != 4:
        raise DimensionMismatch("rendered image must be RGBA")
    mask = rendered[..., 3] > s.mask_threshold
    if not mask.any():
        raise EmptyMask("hypothesis projects to no visible pixels")
    lum_r = luminance(rendered[..., :3])
    lum_o = luminance(observed[..., :3])
    if s.variant == "color":
        value = float(np.mean([
            masked_zncc(rendered[..., c], observed[..., c], mask)
            for c in range(3)]))
    else:
        value = masked_zncc(lum_r, lum_o, mask)
    if s.grad_weight > 0:
        value += s.grad_weight * gradient_agreement(lum_r, lum_o, mask)
    return value


# -- coarse stage -------------------------------------------------------------


def _split_seed(seed: int, *labels: int) -> int:
    """Stable derived seed for a pipeline sub-stage."""
    ss = np.random.SeedSequence([int(seed), *labels])
    return int(ss.generate_state(1)[0])


def initial_pose(obs_bbox: BBox2D, k: Intrinsics, object_center,
                 rng: np.random.Generator) -> Pose:
    """Random orientation; object center 1 m along the bbox-center ray."""
    rot = random_rotation(rng).rotation
    ray = np.array([(obs_bbox.center[0] - k.cx) / k.fx,
                    (obs_bbox.center[1] - k.cy) / k.fy, 1.0])
    ray /= np.linalg.norm(ray)
    t = INITIAL_DISTANCE_M * ray - rot @ np.asarray(object_center)
    return Pose(rot, t)


def hypothesis_poses(obs: Observation, field, seed: int,
                     cfg: EstimatorConfig) -> list[Pose]:
    """The 104 coarse candidate poses for an observation.

    The initial random camera is distance-adjusted twice: first by
    fitting the object cuboid's projection into the bbox, then (when
    depth_fit_iters > 0) by fitting the rendered silhouette, which
    removes the cuboid-to-silhouette size bias before the cube rig is
    anchored.
    """
    k_crop = crop_and_resize(obs, cfg.side)[1]
    bbox_c = crop_bbox(obs, cfg.side)
    cuboid = field.content_cuboid
    rng = np.random.default_rng(_split_seed(seed, 0))
    p0 = initial_pose(bbox_c, k_crop, cuboid.center, rng)
    adjusted = adjust_distance(p0, bbox_c, k_crop, cuboid)
    if cfg.depth_fit_iters > 0:
        adjusted = silhouette_depth_fit(adjusted, obs, field, cfg,
                                        iterations=cfg.depth_fit_iters,
                                        seed=_split_seed(seed, 8))
    rig = rig_from_initial(cuboid.center, adjusted)
    return quadruplets(cube_cameras(rig, adjusted))


def coarse(obs: Observation, field: RadianceField, scorer: ScorerSpec = ScorerSpec(),
           seed: int = 0, cfg: EstimatorConfig = EstimatorConfig(),
           keep_renders: bool = False) -> list[Hypothesis]:
    """Rank the 104 cube-station hypotheses against the observed crop.

    Returns hypotheses sorted by descending score (stable order; ties
    keep the lower hypothesis index). Hypotheses whose render has no
    visible pixels score -inf.
    """
    crop, k_crop = crop_and_resize(obs, cfg.side)
    poses = hypothesis_poses(obs, field, seed, cfg)
    _ensure_occupancy(field, cfg)
    renders = render_poses(field, poses, k_crop, spp=cfg.spp, n=cfg.n_samples,
                           seed=_split_seed(seed, 1), opts=cfg.render_options())
    scores = np.empty(len(poses))
    for i in range(len(poses)):
        try:
            scores[i] = score(scorer, renders[i], crop)
        except EmptyMask:
            scores[i] = -np.inf
    order = np.argsort(-scores, kind="stable")
    return [Hypothesis(poses[i], float(scores[i]),
                       renders[i] if keep_renders else None) for i in order]


def _ensure_occupancy(field, cfg: EstimatorConfig):
    if cfg.use_occupancy and isinstance(field, RadianceField) \
            and field.occupancy is None:
        field.bake_occupancy()


# -- silhouette depth correction ----------------------------------------------


def silhouette_depth_fit(pose: Pose, obs: Observation, field,
                         cfg: EstimatorConfig = EstimatorConfig(),
                         iterations: int = 3, seed: int = 0) -> Pose:
    """Rescale depth so the rendered silhouette fits the detection bbox.

    Fitting the object cuboid's projection into a tight silhouette bbox
    (adjust_distance) overestimates distance, since the object rarely
    fills its bounding cuboid. This step replaces the cuboid projection
    with the actual rendered alpha mask and re-applies the same
    larger-extent similar-triangles update.
    """
    _, k_crop = crop_and_resize(obs, cfg.side)
    bbox_c = crop_bbox(obs, cfg.side)
    opts = cfg.render_options()
    current = pose
    for it in range(iterations):
        img = render_image(field, current, k_crop, spp=1, n=cfg.n_samples,
                           seed=_split_seed(seed, 6, it), opts=opts)
        ys, xs = np.nonzero(img[..., 3] > cfg.mask_alpha)
        if xs.size < 4:
            return current
        w = float(xs.max() - xs.min() + 1)
        h = float(ys.max() - ys.min() + 1)
        ratio = max(w / bbox_c.width, h / bbox_c.height)
        if abs(ratio - 1.0) < 5e-3:
            break
        t = current.translation
        current = Pose(current.rotation,
                       t + np.array([0.0, 0.0, t[2] * (ratio - 1.0)]))
        if current.translation[2] <= 0:
            return pose
    return current


# -- refinement ---------------------------------------------------------------


@dataclass(frozen=True)
class RefineResult:
    pose: Pose
    score: float


def _perturb(pose: Pose, rotvec, dt) -> Pose:
    rot = rotation_from_axis_angle(rotvec) @ pose.rotation
    if rotation_drift(rot) > 1e-9:
        rot = orthonormalize(rot)
    return Pose(rot, pose.translation + dt)


def refine(pose: Pose, obs: Observation, field, scorer: ScorerSpec = ScorerSpec(),
           cfg: RefineConfig = RefineConfig(),
           est_cfg: EstimatorConfig = EstimatorConfig()) -> RefineResult:
    """Iterative local search around a pose; the score never decreases.

    Each iteration draws `candidates` Gaussian perturbations (axis-angle
    rotation, translation scaled by the object diameter), renders and
    scores them, and keeps the best of candidates + incumbent. The
    search radius decays per iteration.
    """
    crop, k_crop = crop_and_resize(obs, est_cfg.side)
    _ensure_occupancy(field, est_cfg)
    opts = est_cfg.render_options()
    diameter = field.content_cuboid.diagonal

    def score_pose(p: Pose, seed: int) -> float:
        img = render_image(field, p, k_crop, spp=est_cfg.spp,
                           n=est_cfg.n_samples, seed=seed, opts=opts)
        try:
            return score(scorer, img, crop)
        except EmptyMask:
            return -np.inf

    rng = np.random.default_rng(_split_seed(cfg.seed, 2))
    best_pose = pose
    best_score = score_pose(pose, _split_seed(cfg.seed, 3))
    for it in range(cfg.iterations):
        sig_r = cfg.sigma_rot * (cfg.decay ** it)
        sig_t = cfg.sigma_trans * diameter * (cfg.decay ** it)
        rotvecs = rng.normal(0.0, sig_r, (cfg.candidates, 3))
        dts = rng.normal(0.0, sig_t, (cfg.candidates, 3))
        cands = [_perturb(best_pose, rv, dt) for rv, dt in zip(rotvecs, dts)]
        # one shared render seed per iteration: jitter noise is common
        # to all candidates and cancels in the comparison
        renders = render_poses(field, cands, k_crop, spp=est_cfg.spp,
                               n=est_cfg.n_samples,
                               seed=_split_seed(cfg.seed, 4, it), opts=opts,
                               seed_stride=0)
        for i, cand in enumerate(cands):
            try:
                s = score(scorer, renders[i], crop)
            except EmptyMask:
                continue
            if s > best_score:
                best_score = s
                best_pose = cand
    return RefineResult(best_pose, float(best_score))


# -- full pipeline ------------------------------------------------------------


@dataclass
class EstimateResult:
    pose: Pose
    score: float
    timings: dict = dc_field(default_factory=dict)
    coarse_scores: np.ndarray | None = None


def estimate(obs: Observation, field: RadianceField,
             scorer: ScorerSpec = ScorerSpec(),
             refine_cfg: RefineConfig = RefineConfig(), seed: int = 0,
             cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Coarse ranking followed by refinement of the top hypothesis."""
    t_start = time.perf_counter()
    ranked = coarse(obs, field, scorer, seed=seed, cfg=cfg)
    t_coarse = time.perf_counter()
    if not np.isfinite(ranked[0].score):
        raise EstimationFailed("every hypothesis projected to an empty image")
    start = ranked[0].pose
    if cfg.depth_fit_iters > 0:
        start = silhouette_depth_fit(start, obs, field, cfg,
                                     iterations=cfg.depth_fit_iters,
                                     seed=_split_seed(seed, 7))
    t_depth = time.perf_counter()
    result = refine(start, obs, field, scorer,
                    cfg=RefineConfig(refine_cfg.iterations, refine_cfg.candidates,
                                     refine_cfg.sigma_rot, refine_cfg.sigma_trans,
                                     refine_cfg.decay, seed=_split_seed(seed, 5)),
                    est_cfg=cfg)
    t_end = time.perf_counter()
    return EstimateResult(
        pose=result.pose, score=result.score,
        timings={"coarse": t_coarse - t_start, "depth_fit": t_depth - t_coarse,
                 "refine": t_end - t_depth, "total": t_end - t_start},
        coarse_scores=np.array([h.score for h in ranked]))
