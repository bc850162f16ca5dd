import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nerfpose.errors import (
    DegenerateBox,
    EmptyMesh,
    MissingDiameter,
    VertexBehindCamera,
)
from nerfpose.geometry import (
    Cuboid3D,
    Intrinsics,
    Pose,
    compose,
    project,
    random_rotation,
    rotation_about_z,
)
from nerfpose.metrics import (
    MeshModel,
    RecordErrors,
    ThresholdSchedule,
    add,
    adi,
    continuous_symmetries,
    iou3d,
    iou3d_monte_carlo,
    mspd,
    mssd,
    recall,
    rot_trans_err,
)

K = Intrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0, width=640, height=480)


def rand_pose(rng, tmax=0.05, z_offset=0.0):
    p = random_rotation(rng)
    t = rng.uniform(-tmax, tmax, 3)
    t[2] += z_offset
    return Pose(p.rotation, t)


def cloud(rng, n=50, scale=0.1):
    return MeshModel(rng.uniform(-scale, scale, (n, 3)))


# -- brute-force oracles: independent per-vertex python loops ------------------


def add_oracle(est, gt, m):
    total = 0.0
    for v in m.vertices:
        a = est.rotation @ v + est.translation
        b = gt.rotation @ v + gt.translation
        total += float(np.sqrt(((a - b) ** 2).sum()))
    return total / len(m.vertices)


def adi_oracle(est, gt, m):
    pts_est = [est.rotation @ v + est.translation for v in m.vertices]
    pts_gt = [gt.rotation @ v + gt.translation for v in m.vertices]
    total = 0.0
    for a in pts_est:
        best = np.inf
        for b in pts_gt:
            best = min(best, float(np.sqrt(((a - b) ** 2).sum())))
        total += best
    return total / len(pts_est)


def mssd_oracle(est, gt, m):
    best = np.inf
    for s in m.symmetries:
        worst = 0.0
        for v in m.vertices:
            a = est.rotation @ v + est.translation
            b = gt.rotation @ (s.rotation @ v + s.translation) + gt.translation
            worst = max(worst, float(np.sqrt(((a - b) ** 2).sum())))
        best = min(best, worst)
    return best


def mspd_oracle(est, gt, m, k):
    def proj(p):
        return np.array([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])

    best = np.inf
    for s in m.symmetries:
        worst = 0.0
        for v in m.vertices:
            a = proj(est.rotation @ v + est.translation)
            b = proj(gt.rotation @ (s.rotation @ v + s.translation) + gt.translation)
            worst = max(worst, float(np.sqrt(((a - b) ** 2).sum())))
        best = min(best, worst)
    return best


class TestPointMetricsOracle:
    def test_against_brute_force(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            m = MeshModel(rng.uniform(-0.1, 0.1, (50, 3)),
                          symmetries=(Pose(rotation_about_z(np.pi), np.zeros(3)),))
            est = rand_pose(rng, z_offset=1.0)
            gt = rand_pose(rng, z_offset=1.0)
            assert abs(add(est, gt, m) - add_oracle(est, gt, m)) <= 1e-12 * max(1, add_oracle(est, gt, m))
            assert abs(adi(est, gt, m) - adi_oracle(est, gt, m)) <= 1e-12 * max(1, adi_oracle(est, gt, m))
            assert abs(mssd(est, gt, m) - mssd_oracle(est, gt, m)) <= 1e-12 * max(1, mssd_oracle(est, gt, m))
            assert abs(mspd(est, gt, m, K) - mspd_oracle(est, gt, m, K)) <= 1e-12 * max(1, mspd_oracle(est, gt, m, K))

    def test_zero_at_equality(self):
        rng = np.random.default_rng(1)
        m = cloud(rng)
        p = rand_pose(rng, z_offset=1.0)
        assert add(p, p, m) == 0.0
        assert adi(p, p, m) == 0.0
        assert mssd(p, p, m) == 0.0
        assert mspd(p, p, m, K) == 0.0
        assert rot_trans_err(p, p) == (0.0, 0.0)

    def test_pure_translation(self):
        rng = np.random.default_rng(2)
        m = cloud(rng)
        gt = Pose(np.eye(3), [0, 0, 1.0])
        est = Pose(np.eye(3), [0.01, 0, 1.0])
        assert abs(add(est, gt, m) - 0.01) < 1e-12
        assert abs(mssd(est, gt, MeshModel(m.vertices)) - 0.01) < 1e-12
        _, trans = rot_trans_err(est, gt)
        assert abs(trans - 0.01) < 1e-15

    def test_adi_absorbs_ring_symmetry(self):
        # uniform point ring rotated by its own step angle: adi 0, add > 0
        angles = np.arange(16) * (2 * np.pi / 16)
        ring = np.stack([0.1 * np.cos(angles), 0.1 * np.sin(angles),
                         np.zeros(16)], axis=1)
        m = MeshModel(ring)
        gt = Pose(np.eye(3), [0, 0, 1.0])
        est = Pose(rotation_about_z(2 * np.pi / 16), [0, 0, 1.0])
        assert adi(est, gt, m) < 1e-12
        assert add(est, gt, m) > 1e-3

    def test_mssd_symmetry_absorption(self):
        rng = np.random.default_rng(3)
        # 4-fold symmetric plate
        base = rng.uniform(-0.05, 0.05, (10, 3))
        pts = np.concatenate([base @ rotation_about_z(a).T
                              for a in (0, np.pi / 2, np.pi, 3 * np.pi / 2)])
        syms = tuple(Pose(rotation_about_z(a), np.zeros(3))
                     for a in (np.pi / 2, np.pi, 3 * np.pi / 2))
        m = MeshModel(pts, symmetries=syms)
        gt = Pose(np.eye(3), [0, 0, 1.0])
        est = compose(Pose(rotation_about_z(np.pi / 2), np.zeros(3)), gt)
        # est = quarter-turn about the symmetry axis applied in camera frame
        est = Pose(gt.rotation @ rotation_about_z(np.pi / 2), gt.translation)
        assert mssd(est, gt, m) < 1e-9
        assert mspd(est, gt, m, K) < 1e-6

    def test_mssd_no_symmetry_translation_is_norm(self):
        rng = np.random.default_rng(4)
        m = cloud(rng)
        gt = Pose(np.eye(3), [0, 0, 1.0])
        t = np.array([0.01, -0.02, 0.005])
        est = Pose(np.eye(3), gt.translation + t)
        assert abs(mssd(est, gt, m) - np.linalg.norm(t)) < 1e-12

    def test_rotation_errors(self):
        rng = np.random.default_rng(5)
        gt = Pose(np.eye(3), [0, 0, 1.0])
        est = Pose(rotation_about_z(np.pi), gt.translation)
        r, t = rot_trans_err(est, gt)
        assert abs(r - 180.0) < 1e-9
        # with the 180-degree symmetry listed, the error vanishes
        r2, _ = rot_trans_err(est, gt, (Pose(rotation_about_z(np.pi), np.zeros(3)),))
        assert r2 < 1e-6

    def test_empty_mesh_rejected(self):
        with pytest.raises(EmptyMesh):
            MeshModel(np.zeros((0, 3)))

    def test_vertex_behind_camera(self):
        rng = np.random.default_rng(6)
        m = cloud(rng)
        gt = Pose(np.eye(3), [0, 0, 1.0])
        est = Pose(np.eye(3), [0, 0, -1.0])
        with pytest.raises(VertexBehindCamera):
            mspd(est, gt, m, K)

    def test_diameter_validation(self):
        pts = np.array([[0, 0, 0], [0.1, 0, 0]])
        m = MeshModel(pts)
        assert abs(m.diameter - 0.1) < 1e-12
        with pytest.raises(ValueError):
            MeshModel(pts, diameter=0.2)

    def test_adi_le_add_always(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            m = cloud(rng, n=30)
            est = rand_pose(rng, z_offset=1.0)
            gt = rand_pose(rng, z_offset=1.0)
            assert adi(est, gt, m) <= add(est, gt, m) + 1e-12


class TestSymmetryInvariance:
    @given(st.integers(0, 5000))
    @settings(max_examples=25, deadline=None)
    def test_metrics_invariant_under_listed_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        m = MeshModel(rng.uniform(-0.08, 0.08, (30, 3)),
                      symmetries=(Pose(rotation_about_z(np.pi / 2), np.zeros(3)),
                                  Pose(rotation_about_z(np.pi), np.zeros(3)),
                                  Pose(rotation_about_z(3 * np.pi / 2), np.zeros(3))))
        est = rand_pose(rng, z_offset=1.0)
        gt = rand_pose(rng, z_offset=1.0)
        sym = m.symmetries[rng.integers(0, len(m.symmetries))]
        gt_s = compose(gt, sym)
        assert abs(mssd(est, gt, m) - mssd(est, gt_s, m)) < 1e-9
        assert abs(mspd(est, gt, m, K) - mspd(est, gt_s, m, K)) < 1e-6
        r1, _ = rot_trans_err(est, gt, m.symmetries)
        r2, _ = rot_trans_err(est, gt_s, m.symmetries)
        assert abs(r1 - r2) < 1e-6

    @given(st.integers(0, 5000))
    @settings(max_examples=25, deadline=None)
    def test_left_invariance_under_camera_change(self, seed):
        rng = np.random.default_rng(seed)
        m = MeshModel(rng.uniform(-0.08, 0.08, (25, 3)),
                      symmetries=(Pose(rotation_about_z(np.pi), np.zeros(3)),))
        est = rand_pose(rng, z_offset=1.0)
        gt = rand_pose(rng, z_offset=1.0)
        change = rand_pose(rng, tmax=0.3)
        est2, gt2 = compose(change, est), compose(change, gt)
        assert abs(add(est, gt, m) - add(est2, gt2, m)) < 1e-9
        assert abs(adi(est, gt, m) - adi(est2, gt2, m)) < 1e-9
        assert abs(mssd(est, gt, m) - mssd(est2, gt2, m)) < 1e-9
        r1 = rot_trans_err(est, gt, m.symmetries)
        r2 = rot_trans_err(est2, gt2, m.symmetries)
        assert abs(r1[0] - r2[0]) < 1e-6 and abs(r1[1] - r2[1]) < 1e-9


class TestContinuousSymmetries:
    def test_discretization(self):
        syms = continuous_symmetries([0, 0, 1], steps=64)
        assert len(syms) == 64
        ring = np.stack([np.cos(np.arange(64) * 2 * np.pi / 64) * 0.1,
                         np.sin(np.arange(64) * 2 * np.pi / 64) * 0.1,
                         np.zeros(64)], axis=1)
        m = MeshModel(ring, symmetries=tuple(syms))
        gt = Pose(np.eye(3), [0, 0, 1.0])
        est = Pose(rotation_about_z(2 * np.pi * 7 / 64), gt.translation)
        assert mssd(est, gt, m) < 1e-9


class TestIoU3D:
    unit = Cuboid3D(np.zeros(3), np.full(3, 0.5))

    def test_identical(self):
        p = Pose(np.eye(3), [0, 0, 1.0])
        assert abs(iou3d(p, p, self.unit) - 1.0) < 1e-9

    def test_disjoint(self):
        a = Pose(np.eye(3), [0, 0, 1.0])
        b = Pose(np.eye(3), [5.0, 0, 1.0])
        assert iou3d(a, b, self.unit) == 0.0

    def test_half_shift(self):
        a = Pose(np.eye(3), [0, 0, 1.0])
        b = Pose(np.eye(3), [0.5, 0, 1.0])
        assert abs(iou3d(a, b, self.unit) - 1.0 / 3.0) < 1e-6

    def test_rotated_overlap_against_monte_carlo(self):
        rng = np.random.default_rng(8)
        boxes = [self.unit, Cuboid3D(np.zeros(3), [0.3, 0.2, 0.45])]
        for trial in range(100):
            c = boxes[trial % 2]
            a = rand_pose(rng, tmax=0.2, z_offset=1.0)
            b_rot = random_rotation(rng)
            b = Pose(b_rot.rotation,
                     a.translation + rng.uniform(-0.3, 0.3, 3))
            exact = iou3d(a, b, c)
            mc = iou3d_monte_carlo(a, b, c, n=200_000, seed=trial)
            assert abs(exact - mc) < 0.01

    def test_degenerate_box(self):
        with pytest.raises(DegenerateBox):
            iou3d(Pose.identity(), Pose.identity(),
                  Cuboid3D(np.zeros(3), [0.1, 0.1, 0.0]))


class TestRecall:
    def make_record(self, **kw):
        base = dict(scene_id=1, im_id=0, obj_id=1, add=0.0, adi=0.0, mssd=0.0,
                    mspd=0.0, rot_deg=0.0, trans_m=0.0, iou=1.0, diameter=0.2)
        base.update(kw)
        return RecordErrors(**base)

    def test_all_zero_errors(self):
        report = recall([self.make_record() for _ in range(3)])
        assert report.ar_mssd == 1.0 and report.ar_mspd == 1.0
        assert report.ar_bop == 1.0 and report.ar_add == 1.0 and report.ar_adi == 1.0
        assert all(v == 1.0 for v in report.iou_at.values())
        assert all(v == 1.0 for v in report.rot_trans_acc.values())
        assert report.accuracy_add_10pct == 1.0

    def test_mssd_quarter(self):
        # 0.26 x diameter passes thresholds 0.30..0.50: 5 of 10
        report = recall([self.make_record(mssd=0.26 * 0.2)])
        assert report.ar_mssd == 0.5

    def test_rot_trans_thresholds(self):
        # (4 deg, 3 cm) passes 5deg5cm and 10deg5cm only
        report = recall([self.make_record(rot_deg=4.0, trans_m=0.03)])
        acc = report.rot_trans_acc
        assert acc["5deg2cm"] == 0.0 and acc["10deg2cm"] == 0.0
        assert acc["5deg5cm"] == 1.0 and acc["10deg5cm"] == 1.0

    def test_ar_bop_is_mean(self):
        report = recall([self.make_record(mssd=0.26 * 0.2, mspd=22.0)])
        # mspd 22 px passes 25..50: 6 of 10
        assert report.ar_mspd == 0.6
        assert abs(report.ar_bop - 0.55) < 1e-12

    def test_missing_diameter(self):
        with pytest.raises(MissingDiameter):
            recall([self.make_record(diameter=np.nan)])

    def test_monotone_in_error(self):
        rng = np.random.default_rng(9)
        base = [self.make_record(mssd=rng.uniform(0, 0.1),
                                 mspd=rng.uniform(0, 40)) for _ in range(10)]
        r0 = recall(base)
        worse = list(base)
        worse[3] = self.make_record(mssd=base[3].mssd + 0.05, mspd=base[3].mspd)
        r1 = recall(worse)
        assert r1.ar_mssd <= r0.ar_mssd
        assert r1.ar_bop <= r0.ar_bop

    def test_symmetric_uses_adi_for_accuracy(self):
        rec = self.make_record(add=0.05, adi=0.001, symmetric=True)
        assert recall([rec]).accuracy_add_10pct == 1.0
        rec = self.make_record(add=0.05, adi=0.001, symmetric=False)
        assert recall([rec]).accuracy_add_10pct == 0.0


def test_report_files_roundtrip(tmp_path):
    from nerfpose.metrics import write_error_table, write_report

    errs = [RecordErrors(1, 0, 1, 0.01, 0.005, 0.02, 3.0, 2.0, 0.01, 0.9, 0.2)]
    report = recall(errs)
    rp = tmp_path / "report.txt"
    write_report(report, rp)
    text = rp.read_text()
    assert "[mssd]" in text and "ar_bop=" in text
    tp = tmp_path / "errors.csv"
    write_error_table(errs, tp)
    lines = tp.read_text().strip().split("\n")
    assert lines[0].startswith("scene,image,object")
    assert len(lines) == 2
