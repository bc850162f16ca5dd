"""Symmetry-aware pose-error metrics and recall aggregation (BOP style).

Errors: ADD (mean per-vertex 3D error), ADI (nearest-neighbor variant),
MSSD (min over symmetries of the max per-vertex 3D error), MSPD (same
in projected pixels), rotation/translation errors, and oriented-box 3D
IoU. Recall averages pass rates over threshold schedules; the combined
score is the mean of the MSSD and MSPD average recalls.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import QhullError, ConvexHull, cKDTree

from .errors import (
    DegenerateBox,
    EmptyMesh,
    MissingDiameter,
    VertexBehindCamera,
)
from .geometry import Cuboid3D, Intrinsics, Pose, project, rotation_from_axis_angle

CONTINUOUS_SYMMETRY_STEPS = 64


@dataclass(frozen=True)
class MeshModel:
    """Vertex set with diameter and symmetry transforms.

    The identity is always present in the symmetry list. The diameter
    must equal the max pairwise vertex distance (validated when given,
    computed when omitted).
    """

    vertices: np.ndarray
    diameter: float | None = None
    symmetries: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        if v.shape[0] == 0:
            raise EmptyMesh("mesh has no vertices")
        object.__setattr__(self, "vertices", v)
        true_diameter = max_pairwise_distance(v)
        if self.diameter is None:
            object.__setattr__(self, "diameter", true_diameter)
        elif abs(self.diameter - true_diameter) > 1e-9 * max(1.0, true_diameter):
            raise ValueError(
                f"diameter {self.diameter} inconsistent with vertices "
                f"(max pairwise {true_diameter})")
        syms = list(self.symmetries)
        if not any(_is_identity(s) for s in syms):
            syms.insert(0, Pose.identity())
        object.__setattr__(self, "symmetries", tuple(syms))


def _is_identity(p: Pose) -> bool:
    return (np.abs(p.rotation - np.eye(3)).max() < 1e-12
            and np.abs(p.translation).max() < 1e-12)


def max_pairwise_distance(v: np.ndarray, block: int = 1024) -> float:
    best = 0.0
    for s in range(0, v.shape[0], block):
        d = np.linalg.norm(v[s:s + block, None] - v[None], axis=-1)
        best = max(best, float(d.max()))
    return best


def continuous_symmetries(axis, offset=(0.0, 0.0, 0.0),
                          steps: int = CONTINUOUS_SYMMETRY_STEPS) -> list[Pose]:
    """Discretize a continuous rotational symmetry into `steps` poses."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    offset = np.asarray(offset, dtype=np.float64)
    out = []
    for i in range(steps):
        angle = 2 * np.pi * i / steps
        R = rotation_from_axis_angle(axis * angle)
        # rotate about the offset axis point: x -> R (x - o) + o
        out.append(Pose(R, offset - R @ offset))
    return out


# -- point-set errors ----------------------------------------------------------


def add(est: Pose, gt: Pose, m: MeshModel) -> float:
    """Mean per-vertex 3D distance (meters)."""
    return float(np.linalg.norm(est.apply(m.vertices) - gt.apply(m.vertices),
                                axis=1).mean())


def adi(est: Pose, gt: Pose, m: MeshModel) -> float:
    """Mean nearest-neighbor distance from est- to gt-transformed vertices."""
    pts_est = est.apply(m.vertices)
    pts_gt = gt.apply(m.vertices)
    nn, _ = cKDTree(pts_gt).query(pts_est, k=1)
    return float(nn.mean())


def mssd(est: Pose, gt: Pose, m: MeshModel) -> float:
    """Min over symmetries of the max per-vertex 3D distance (meters)."""
    pts_est = est.apply(m.vertices)
    best = np.inf
    for s in m.symmetries:
        pts_gt = gt.apply(s.apply(m.vertices))
        best = min(best, float(np.linalg.norm(pts_est - pts_gt, axis=1).max()))
    return best


def mspd(est: Pose, gt: Pose, m: MeshModel, k: Intrinsics) -> float:
    """Min over symmetries of the max projected vertex distance (pixels)."""
    cam_est = est.apply(m.vertices)
    if np.any(cam_est[:, 2] <= 0):
        raise VertexBehindCamera("estimated pose puts vertices at z <= 0")
    uv_est = project(cam_est, k)
    best = np.inf
    for s in m.symmetries:
        cam_gt = gt.apply(s.apply(m.vertices))
        if np.any(cam_gt[:, 2] <= 0):
            raise VertexBehindCamera("ground-truth pose puts vertices at z <= 0")
        uv_gt = project(cam_gt, k)
        best = min(best, float(np.linalg.norm(uv_est - uv_gt, axis=1).max()))
    return best


def rot_trans_err(est: Pose, gt: Pose, symmetries=()) -> tuple[float, float]:
    """(rotation error degrees, translation error meters).

    Rotation error is minimized over the symmetry rotations; translation
    error is the plain distance between the pose translations.
    """
    syms = list(symmetries) or [Pose.identity()]
    best = np.inf
    for s in syms:
        rel = (gt.rotation @ s.rotation).T @ est.rotation
        cosang = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
        best = min(best, float(np.degrees(np.arccos(cosang))))
    return best, float(np.linalg.norm(est.translation - gt.translation))


# -- oriented-box IoU ----------------------------------------------------------


def _box_edges(corners: np.ndarray):
    idx = [(0, 1), (0, 2), (1, 3), (2, 3), (4, 5), (4, 6), (5, 7), (6, 7),
           (0, 4), (1, 5), (2, 6), (3, 7)]
    return [(corners[i], corners[j]) for i, j in idx]


def _clip_segment_to_box(p0, p1, box: Cuboid3D):
    """Points of the segment inside the box (0, 1, or 2 endpoints)."""
    d = p1 - p0
    lo, hi = 0.0, 1.0
    o = (p0 - box.center) @ box.orientation
    v = d @ box.orientation
    for a in range(3):
        if abs(v[a]) < 1e-15:
            if abs(o[a]) > box.half_extents[a] + 1e-12:
                return []
            continue
        t1 = (-box.half_extents[a] - o[a]) / v[a]
        t2 = (box.half_extents[a] - o[a]) / v[a]
        lo = max(lo, min(t1, t2))
        hi = min(hi, max(t1, t2))
    if lo > hi:
        return []
    return [p0 + lo * d, p0 + hi * d]


def _posed_box(pose: Pose, c: Cuboid3D) -> Cuboid3D:
    """Cuboid expressed in the camera frame under a pose."""
    return Cuboid3D(pose.apply(c.center), c.half_extents,
                    pose.rotation @ c.orientation)


def iou3d(est: Pose, gt: Pose, c: Cuboid3D) -> float:
    """Exact IoU of the two posed oriented boxes via polytope vertices.

    The intersection polytope's vertices are corners of one box inside
    the other plus edge/face clip points; its volume comes from the
    convex hull (a sum of simplex volumes).
    """
    if np.any(c.half_extents <= 0):
        raise DegenerateBox(f"cuboid has non-positive extent {c.half_extents}")
    a = _posed_box(est, c)
    b = _posed_box(gt, c)
    pts = []
    ca, cb = a.corners(), b.corners()
    pts.extend(ca[b.contains(ca, atol=1e-12)])
    pts.extend(cb[a.contains(cb, atol=1e-12)])
    for p0, p1 in _box_edges(ca):
        pts.extend(_clip_segment_to_box(p0, p1, b))
    for p0, p1 in _box_edges(cb):
        pts.extend(_clip_segment_to_box(p0, p1, a))
    inter = 0.0
    if len(pts) >= 4:
        try:
            inter = float(ConvexHull(np.asarray(pts)).volume)
        except QhullError:
            inter = 0.0  # flat/degenerate overlap has zero volume
    union = a.volume + b.volume - inter
    return float(np.clip(inter / union, 0.0, 1.0))


def iou3d_monte_carlo(est: Pose, gt: Pose, c: Cuboid3D, n: int = 200_000,
                      seed: int = 0) -> float:
    """Seeded sampling estimate of the same IoU (agreement check)."""
    if np.any(c.half_extents <= 0):
        raise DegenerateBox(f"cuboid has non-positive extent {c.half_extents}")
    a = _posed_box(est, c)
    b = _posed_box(gt, c)
    rng = np.random.default_rng(seed)
    local = rng.uniform(-1.0, 1.0, (n, 3)) * a.half_extents
    pts = local @ a.orientation.T + a.center
    frac = float(b.contains(pts).mean())
    inter = frac * a.volume
    union = a.volume + b.volume - inter
    return inter / union


# -- recall aggregation --------------------------------------------------------


@dataclass(frozen=True)
class ThresholdSchedule:
    """Threshold sets for recall; errors pass strictly below a threshold."""

    mssd_rel: tuple = tuple(np.round(np.arange(1, 11) * 0.05, 10))  # x diameter
    mspd_px: tuple = tuple(range(5, 55, 5))
    add_m: tuple = tuple(np.round(np.arange(1, 11) * 0.01, 10))     # 1..10 cm
    adi_m: tuple = tuple(np.round(np.arange(1, 11) * 0.01, 10))
    iou_levels: tuple = (0.25, 0.50, 0.75)
    rot_trans: tuple = ((5.0, 0.02), (5.0, 0.05), (10.0, 0.02), (10.0, 0.05))


@dataclass
class RecordErrors:
    """All per-record error values, units as in the metric functions."""

    scene_id: int
    im_id: int
    obj_id: int
    add: float
    adi: float
    mssd: float
    mspd: float
    rot_deg: float
    trans_m: float
    iou: float
    diameter: float
    symmetric: bool = False


@dataclass
class RecallReport:
    ar_mssd: float
    ar_mspd: float
    ar_bop: float
    ar_add: float
    ar_adi: float
    iou_at: dict
    rot_trans_acc: dict
    accuracy_add_10pct: float
    curves: dict = dc_field(default_factory=dict)
    n_records: int = 0


def _recall_curve(errors: np.ndarray, thresholds) -> list[float]:
    return [float((errors < t).mean()) for t in thresholds]


def recall(errors: list[RecordErrors],
           schedule: ThresholdSchedule = ThresholdSchedule()) -> RecallReport:
    """Average recall over the threshold schedules.

    MSSD thresholds scale per record with the object diameter. The
    ADD(-S) accuracy (accuracy_add_10pct) counts records whose ADD
    (ADI for symmetric objects) is below 10% of the diameter; that
    definition of "accuracy" is an assumed convention and is labeled
    as such in the report file.
    """
    if not errors:
        raise ValueError("no records to evaluate")
    if any(e.diameter is None or not np.isfinite(e.diameter) or e.diameter <= 0
           for e in errors):
        raise MissingDiameter("every record needs a positive object diameter")
    mssd_rel = np.array([e.mssd / e.diameter for e in errors])
    mspd_px = np.array([e.mspd for e in errors])
    add_m = np.array([e.add for e in errors])
    adi_m = np.array([e.adi for e in errors])
    rot = np.array([e.rot_deg for e in errors])
    trans = np.array([e.trans_m for e in errors])
    iou = np.array([e.iou for e in errors])
    adds = np.array([e.adi if e.symmetric else e.add for e in errors])
    diam = np.array([e.diameter for e in errors])

    curves = {
        "mssd": _recall_curve(mssd_rel, schedule.mssd_rel),
        "mspd": _recall_curve(mspd_px, schedule.mspd_px),
        "add": _recall_curve(add_m, schedule.add_m),
        "adi": _recall_curve(adi_m, schedule.adi_m),
    }
    ar_mssd = float(np.mean(curves["mssd"]))
    ar_mspd = float(np.mean(curves["mspd"]))
    report = RecallReport(
        ar_mssd=ar_mssd,
        ar_mspd=ar_mspd,
        ar_bop=0.5 * (ar_mssd + ar_mspd),
        ar_add=float(np.mean(curves["add"])),
        ar_adi=float(np.mean(curves["adi"])),
        iou_at={lvl: float((iou >= lvl).mean()) for lvl in schedule.iou_levels},
        rot_trans_acc={
            f"{int(r)}deg{int(t * 100)}cm": float(((rot < r) & (trans < t)).mean())
            for r, t in schedule.rot_trans},
        accuracy_add_10pct=float((adds < 0.1 * diam).mean()),
        curves=curves,
        n_records=len(errors),
    )
    return report


# -- report files --------------------------------------------------------------


def write_report(report: RecallReport, path) -> None:
    """Structured text: one header block per metric, key=value lines."""
    lines = [f"[summary]", f"n_records={report.n_records}",
             f"ar_bop={report.ar_bop:.9g}", ""]
    lines += ["[mssd]", f"ar={report.ar_mssd:.9g}"]
    lines += [f"recall_{i}={v:.9g}" for i, v in enumerate(report.curves["mssd"])]
    lines += ["", "[mspd]", f"ar={report.ar_mspd:.9g}"]
    lines += [f"recall_{i}={v:.9g}" for i, v in enumerate(report.curves["mspd"])]
    lines += ["", "[add]", f"ar={report.ar_add:.9g}"]
    lines += ["", "[adi]", f"ar={report.ar_adi:.9g}"]
    lines += ["", "[iou3d]"]
    lines += [f"iou_{int(lvl * 100)}={v:.9g}" for lvl, v in report.iou_at.items()]
    lines += ["", "[rot_trans]"]
    lines += [f"{k}={v:.9g}" for k, v in report.rot_trans_acc.items()]
    lines += ["", "[accuracy]",
              "# ADD(-S) below 10% of the object diameter (assumed convention)",
              f"add_10pct={report.accuracy_add_10pct:.9g}", ""]
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def write_error_table(errors: list[RecordErrors], path) -> None:
    """Per-record CSV of all error values."""
    with open(path, "w") as fh:
        fh.write("scene,image,object,add,adi,mssd,mspd,rot_deg,trans_m,iou3d\n")
        for e in errors:
            fh.write(f"{e.scene_id},{e.im_id},{e.obj_id},{e.add:.9g},{e.adi:.9g},"
                     f"{e.mssd:.9g},{e.mspd:.9g},{e.rot_deg:.9g},"
                     f"{e.trans_m:.9g},{e.iou:.9g}\n")
