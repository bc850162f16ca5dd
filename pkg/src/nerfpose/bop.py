"""BOP-convention dataset I/O: scenes, models, result files.

Directory layout per scene:
    <root>/<scene_id:06d>/scene_camera.json
    <root>/<scene_id:06d>/scene_gt.json
    <root>/<scene_id:06d>/scene_gt_info.json
    <root>/<scene_id:06d>/rgb/<im_id:06d>.png
    <root>/models/models_info.json
    <root>/models/obj_<obj_id:06d>.ply

Files store millimeters (BOP convention); everything in memory is
meters. Conversion happens only here, at the I/O boundary. Readers
reject invalid data rather than repairing it, and every error message
carries the file path and record key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import MalformedRecord, MalformedRow, MissingFile, UnitViolation
from .geometry import BBox2D, Intrinsics, Pose, rotation_drift
from .metrics import MeshModel, continuous_symmetries

MM_PER_M = 1000.0


@dataclass(frozen=True)
class Annotation:
    im_id: int
    obj_id: int
    pose: Pose          # camera-from-model, meters
    bbox: BBox2D


@dataclass(frozen=True)
class ObjectInfo:
    obj_id: int
    diameter: float     # meters
    symmetries: tuple   # Pose list incl. identity


@dataclass
class SceneBundle:
    root: Path
    scene_id: int
    intrinsics: dict            # im_id -> Intrinsics
    image_paths: dict           # im_id -> Path
    annotations: list
    objects: dict = dc_field(default_factory=dict)  # obj_id -> ObjectInfo

    def load_image(self, im_id: int) -> np.ndarray:
        """RGB image as float32 in [0, 1]."""
        return np.asarray(Image.open(self.image_paths[im_id]).convert("RGB"),
                          dtype=np.float32) / 255.0


def _scene_dir(root, scene_id: int) -> Path:
    return Path(root) / f"{scene_id:06d}"


def _read_json(path: Path):
    if not path.exists():
        raise MissingFile(str(path))
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise MalformedRecord(f"{path}: invalid JSON ({e})") from e


def _require(cond: bool, path, key, msg: str):
    if not cond:
        raise MalformedRecord(f"{path}: record {key}: {msg}")


def load_scene(root, scene_id: int, load_models: bool = True) -> SceneBundle:
    """Read and validate one scene; translations converted mm -> m."""
    sdir = _scene_dir(root, scene_id)
    cam_path = sdir / "scene_camera.json"
    gt_path = sdir / "scene_gt.json"
    info_path = sdir / "scene_gt_info.json"
    cameras = _read_json(cam_path)
    gts = _read_json(gt_path)
    infos = _read_json(info_path)

    intrinsics = {}
    image_paths = {}
    for key, rec in cameras.items():
        im_id = int(key)
        _require("cam_K" in rec, cam_path, key, "missing cam_K")
        kk = np.asarray(rec["cam_K"], dtype=np.float64)
        _require(kk.size == 9, cam_path, key, "cam_K must have 9 entries")
        kk = kk.reshape(3, 3)
        depth_scale = float(rec.get("depth_scale", 1.0))
        if depth_scale <= 0:
            raise UnitViolation(f"{cam_path}: record {key}: depth_scale <= 0")
        img = sdir / "rgb" / f"{im_id:06d}.png"
        if not img.exists():
            raise MissingFile(str(img))
        with Image.open(img) as im:
            width, height = im.size
        if kk[0, 0] <= 0 or kk[1, 1] <= 0:
            raise UnitViolation(f"{cam_path}: record {key}: non-positive focal length")
        intrinsics[im_id] = Intrinsics(fx=kk[0, 0], fy=kk[1, 1], cx=kk[0, 2],
                                       cy=kk[1, 2], width=width, height=height)
        image_paths[im_id] = img

    annotations = []
    for key, recs in gts.items():
        im_id = int(key)
        _require(im_id in intrinsics, gt_path, key, "no camera for this image")
        info_recs = infos.get(key)
        _require(info_recs is not None and len(info_recs) == len(recs),
                 info_path, key, "gt_info entries do not match scene_gt")
        for j, rec in enumerate(recs):
            for need in ("cam_R_m2c", "cam_t_m2c", "obj_id"):
                _require(need in rec, gt_path, f"{key}[{j}]", f"missing {need}")
            R = np.asarray(rec["cam_R_m2c"], dtype=np.float64)
            _require(R.size == 9, gt_path, f"{key}[{j}]", "cam_R_m2c must have 9 entries")
            R = R.reshape(3, 3)
            t = np.asarray(rec["cam_t_m2c"], dtype=np.float64).reshape(3) / MM_PER_M
            try:
                pose = Pose(R, t)
            except ValueError as e:
                raise MalformedRecord(f"{gt_path}: record {key}[{j}]: {e}") from e
            binfo = info_recs[j]
            _require("bbox_obj" in binfo, info_path, f"{key}[{j}]", "missing bbox_obj")
            x, y, w, h = (float(v) for v in binfo["bbox_obj"])
            _require(w > 0 and h > 0, info_path, f"{key}[{j}]", "bbox has no area")
            k = intrinsics[im_id]
            _require(x >= 0 and y >= 0 and x + w <= k.width and y + h <= k.height,
                     info_path, f"{key}[{j}]", "bbox outside image bounds")
            annotations.append(Annotation(
                im_id=im_id, obj_id=int(rec["obj_id"]),
                pose=pose, bbox=BBox2D(x, y, x + w, y + h)))

    objects = load_models_info(root) if load_models else {}
    return SceneBundle(root=Path(root), scene_id=scene_id, intrinsics=intrinsics,
                       image_paths=image_paths, annotations=annotations,
                       objects=objects)


def save_scene(root, scene_id: int, images, intrinsics: Intrinsics,
               annotations: list, jpeg: bool = False) -> Path:
    """Write images + records in the BOP layout; meters converted to mm.

    `images` maps im_id -> float array in [0, 1] or uint8; every
    annotation's im_id must have an image.
    """
    sdir = _scene_dir(root, scene_id)
    (sdir / "rgb").mkdir(parents=True, exist_ok=True)
    cameras = {}
    gts = {}
    infos = {}
    kk = intrinsics.matrix().reshape(-1)
    for im_id, img in images.items():
        arr = np.asarray(img)
        if arr.dtype != np.uint8:
            arr = (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        Image.fromarray(arr).save(sdir / "rgb" / f"{im_id:06d}.png")
        cameras[str(im_id)] = {"cam_K": [float(v) for v in kk], "depth_scale": 1.0}
        gts[str(im_id)] = []
        infos[str(im_id)] = []
    for ann in annotations:
        if str(ann.im_id) not in gts:
            raise ValueError(f"annotation references missing image {ann.im_id}")
        gts[str(ann.im_id)].append({
            "cam_R_m2c": [float(v) for v in ann.pose.rotation.reshape(-1)],
            "cam_t_m2c": [float(v * MM_PER_M) for v in ann.pose.translation],
            "obj_id": int(ann.obj_id),
        })
        b = ann.bbox
        infos[str(ann.im_id)].append({
            "bbox_obj": [float(b.x_min), float(b.y_min),
                         float(b.width), float(b.height)],
            "bbox_visib": [float(b.x_min), float(b.y_min),
                           float(b.width), float(b.height)],
        })
    for name, payload in (("scene_camera.json", cameras), ("scene_gt.json", gts),
                          ("scene_gt_info.json", infos)):
        with open(sdir / name, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
    return sdir


# -- models --------------------------------------------------------------------


def save_models(root, models: dict, symmetries: dict | None = None) -> Path:
    """Write models_info.json + ascii PLY vertex files (mm on disk).

    `models` maps obj_id -> (N, 3) vertices in meters; `symmetries`
    maps obj_id -> list of Pose (discrete, identity implied).
    """
    mdir = Path(root) / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    info = {}
    for obj_id, verts in models.items():
        v = np.asarray(verts, dtype=np.float64) * MM_PER_M
        save_ply(mdir / f"obj_{obj_id:06d}.ply", v)
        m = MeshModel(np.asarray(verts, dtype=np.float64))
        lo = v.min(axis=0)
        size = v.max(axis=0) - lo
        rec = {
            "diameter": m.diameter * MM_PER_M,
            "min_x": lo[0], "min_y": lo[1], "min_z": lo[2],
            "size_x": size[0], "size_y": size[1], "size_z": size[2],
        }
        syms = (symmetries or {}).get(obj_id, [])
        discrete = []
        for s in syms:
            if np.abs(s.rotation - np.eye(3)).max() < 1e-12 \
                    and np.abs(s.translation).max() < 1e-12:
                continue
            m4 = np.eye(4)
            m4[:3, :3] = s.rotation
            m4[:3, 3] = s.translation * MM_PER_M
            discrete.append([float(x) for x in m4.reshape(-1)])
        if discrete:
            rec["symmetries_discrete"] = discrete
        info[str(obj_id)] = rec
    with open(mdir / "models_info.json", "w") as fh:
        json.dump(info, fh, indent=1, sort_keys=True)
    return mdir


def load_models_info(root) -> dict:
    """models_info.json -> ObjectInfo per object (meters)."""
    path = Path(root) / "models" / "models_info.json"
    if not path.exists():
        return {}
    raw = _read_json(path)
    out = {}
    for key, rec in raw.items():
        obj_id = int(key)
        _require("diameter" in rec, path, key, "missing diameter")
        diameter = float(rec["diameter"]) / MM_PER_M
        if diameter <= 0:
            raise UnitViolation(f"{path}: record {key}: diameter <= 0")
        syms = [Pose.identity()]
        for flat in rec.get("symmetries_discrete", []):
            m4 = np.asarray(flat, dtype=np.float64)
            _require(m4.size == 16, path, key, "discrete symmetry must have 16 entries")
            m4 = m4.reshape(4, 4)
            syms.append(Pose(m4[:3, :3], m4[:3, 3] / MM_PER_M))
        for rec_c in rec.get("symmetries_continuous", []):
            syms.extend(continuous_symmetries(
                rec_c.get("axis", [0, 0, 1]),
                np.asarray(rec_c.get("offset", [0, 0, 0]), dtype=np.float64) / MM_PER_M))
        out[obj_id] = ObjectInfo(obj_id=obj_id, diameter=diameter,
                                 symmetries=tuple(syms))
    return out


def load_mesh(root, obj_id: int) -> MeshModel:
    """PLY vertices (mm -> m) combined with models_info metadata."""
    path = Path(root) / "models" / f"obj_{obj_id:06d}.ply"
    verts = load_ply(path) / MM_PER_M
    info = load_models_info(root).get(obj_id)
    syms = info.symmetries if info is not None else ()
    return MeshModel(verts, symmetries=tuple(syms))


def save_ply(path, vertices_mm: np.ndarray) -> None:
    v = np.asarray(vertices_mm, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(v)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for p in v:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def load_ply(path) -> np.ndarray:
    """Minimal ascii PLY vertex reader (positions only, mm)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    with open(path) as fh:
        line = fh.readline().strip()
        if line != "ply":
            raise MalformedRecord(f"{path}: not a PLY file")
        n = None
        fmt = None
        while True:
            line = fh.readline()
            if not line:
                raise MalformedRecord(f"{path}: header without end_header")
            line = line.strip()
            if line.startswith("format"):
                fmt = line.split()[1]
            elif line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line == "end_header":
                break
        if fmt != "ascii":
            raise MalformedRecord(f"{path}: only ascii PLY is supported, got {fmt}")
        if n is None:
            raise MalformedRecord(f"{path}: missing vertex element")
        rows = []
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) < 3:
                raise MalformedRecord(f"{path}: vertex {i}: fewer than 3 values")
            rows.append([float(parts[0]), float(parts[1]), float(parts[2])])
    return np.asarray(rows, dtype=np.float64)


# -- result files ---------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    """One pose estimate: ids, score, pose (translation meters), seconds."""

    scene_id: int
    im_id: int
    obj_id: int
    score: float
    pose: Pose
    time_s: float

    def __post_init__(self):
        if self.time_s < 0:
            raise ValueError("time must be >= 0")


def save_results(rows: list, path) -> None:
    """CSV lines scene_id,im_id,obj_id,score,R,t,time; R row-major and t
    in millimeters, space-separated inside their fields; 9 significant
    digits throughout."""
    with open(path, "w") as fh:
        fh.write("scene_id,im_id,obj_id,score,R,t,time\n")
        for r in rows:
            rr = " ".join(f"{v:.9g}" for v in r.pose.rotation.reshape(-1))
            tt = " ".join(f"{v * MM_PER_M:.9g}" for v in r.pose.translation)
            fh.write(f"{r.scene_id},{r.im_id},{r.obj_id},{r.score:.9g},"
                     f"{rr},{tt},{r.time_s:.9g}\n")


def load_results(path) -> list:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    rows = []
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        return rows
    start = 1 if lines[0].startswith("scene_id") else 0
    for i, ln in enumerate(lines[start:], start=start + 1):
        parts = ln.split(",")
        if len(parts) != 7:
            raise MalformedRow(f"{path}:{i}: expected 7 fields, got {len(parts)}")
        try:
            scene_id, im_id, obj_id = int(parts[0]), int(parts[1]), int(parts[2])
            score = float(parts[3])
            R = np.array([float(v) for v in parts[4].split()], dtype=np.float64)
            t = np.array([float(v) for v in parts[5].split()], dtype=np.float64)
            time_s = float(parts[6])
        except ValueError as e:
            raise MalformedRow(f"{path}:{i}: {e}") from e
        if R.size != 9 or t.size != 3:
            raise MalformedRow(f"{path}:{i}: R needs 9 values and t needs 3")
        R = R.reshape(3, 3)
        if time_s < 0:
            raise MalformedRow(f"{path}:{i}: negative time")
        try:
            pose = Pose(R, t / MM_PER_M)
        except ValueError as e:
            raise MalformedRow(f"{path}:{i}: {e}") from e
        rows.append(ResultRow(scene_id, im_id, obj_id, score, pose, time_s))
    return rows
