import numpy as np
import pytest

from nerfpose.errors import BehindCamera
from nerfpose.geometry import (
    BBox2D,
    Cuboid3D,
    Intrinsics,
    Pose,
    project,
    random_rotation,
)
from nerfpose.sampling import (
    CubeRig,
    SphereSampling,
    adjust_distance,
    cube_cameras,
    projected_extent,
    quadruplets,
    rig_from_initial,
    sphere_views,
)

K = Intrinsics(fx=200.0, fy=200.0, cx=64.0, cy=64.0, width=128, height=128)


def axis_misses_target(pose: Pose, target) -> float:
    """Perpendicular distance from the optical axis to the target."""
    cam = pose.apply(np.asarray(target, dtype=np.float64))
    return float(np.hypot(cam[0], cam[1]))


class TestSphereViews:
    def test_count(self):
        s = SphereSampling(radii=(0.3, 0.4, 0.5), elevations=8, azimuths=16)
        target = np.array([0.1, -0.2, 0.05])
        poses = sphere_views(s, target)
        assert len(poses) == 384

    def test_axis_through_target(self):
        s = SphereSampling(radii=(0.3, 0.5), elevations=4, azimuths=6)
        target = np.array([0.1, -0.2, 0.05])
        for p in sphere_views(s, target):
            assert axis_misses_target(p, target) < 1e-9

    def test_radii_exact(self):
        s = SphereSampling(radii=(0.3, 0.4, 0.5), elevations=3, azimuths=4)
        target = np.zeros(3)
        for p in sphere_views(s, target):
            r = np.linalg.norm(p.camera_center - target)
            assert min(abs(r - x) for x in s.radii) < 1e-12

    def test_deterministic_and_duplicate_free(self):
        s = SphereSampling(radii=(0.3, 0.5), elevations=4, azimuths=8)
        a = sphere_views(s, np.zeros(3))
        b = sphere_views(s, np.zeros(3))
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.rotation, pb.rotation)
            np.testing.assert_array_equal(pa.translation, pb.translation)
        centers = np.array([p.camera_center for p in a])
        d = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        np.fill_diagonal(d, 1.0)
        assert d.min() > 1e-6

    def test_validation(self):
        with pytest.raises(ValueError):
            SphereSampling(radii=(0.3, 0.3))
        with pytest.raises(ValueError):
            SphereSampling(radii=(-0.1,))


def make_initial(seed=0, dist=1.0, center=(0.0, 0.0, 0.0)):
    """Random-orientation camera whose center is `dist` from `center`."""
    rng = np.random.default_rng(seed)
    rot = random_rotation(rng)
    # choose translation so the camera center lands at distance `dist`
    eye = np.asarray(center) + dist * rot.rotation.T @ np.array([0, 0, -1.0])
    return Pose(rot.rotation, -rot.rotation @ eye)


class TestCubeCameras:
    target = np.array([0.02, -0.01, 0.03])

    def stations(self, seed=0):
        initial = make_initial(seed, dist=1.0, center=self.target)
        rig = rig_from_initial(self.target, initial)
        return rig, initial, cube_cameras(rig, initial)

    def test_station_count_and_kinds(self):
        rig, initial, cams = self.stations()
        assert len(cams) == 26
        # distances from center classify corner/edge/face stations
        r = np.array([np.linalg.norm(p.camera_center - rig.center) for p in cams])
        half = rig.edge / 2.0
        kinds = {"corner": 0, "edge": 0, "face": 0}
        for d in r:
            if abs(d - half * np.sqrt(3)) < 1e-9:
                kinds["corner"] += 1
            elif abs(d - half * np.sqrt(2)) < 1e-9:
                kinds["edge"] += 1
            elif abs(d - half) < 1e-9:
                kinds["face"] += 1
        assert kinds == {"corner": 8, "edge": 12, "face": 6}

    def test_initial_occupies_station_zero(self):
        _, initial, cams = self.stations(seed=3)
        np.testing.assert_allclose(cams[0].camera_center, initial.camera_center, atol=1e-12)

    def test_axes_through_center(self):
        rig, _, cams = self.stations(seed=1)
        for p in cams:
            assert axis_misses_target(p, rig.center) < 1e-9

    def test_symmetry_group_invariance(self):
        # station positions (in cube-local coordinates) are closed under
        # the 48-element signed-permutation group of the cube
        rig, initial, cams = self.stations(seed=2)
        centers = np.array([p.camera_center - rig.center for p in cams])
        # recover cube-local coordinates via the anchoring rotation
        corner = (centers[0]) / np.linalg.norm(centers[0]) * np.sqrt(3)
        from nerfpose.sampling import _rotation_between  # noqa: PLC2701

        M = _rotation_between(np.array([1.0, 1, 1]) / np.sqrt(3), corner / np.sqrt(3))
        local = centers @ M  # M.T applied row-wise
        local = local / (rig.edge / 2.0)
        key = {tuple(np.round(v).astype(int)) for v in local}
        import itertools

        for perm in itertools.permutations(range(3)):
            for signs in itertools.product((-1, 1), repeat=3):
                mapped = {tuple(signs[i] * v[perm[i]] for i in range(3)) for v in key}
                assert mapped == key

    def test_quadruplets(self):
        rig, _, cams = self.stations(seed=4)
        hyps = quadruplets(cams)
        assert len(hyps) == 104
        centers = {tuple(np.round(p.camera_center, 9)) for p in hyps}
        assert len(centers) == 26
        for i, p in enumerate(hyps):
            base = cams[i // 4]
            np.testing.assert_allclose(p.camera_center, base.camera_center, atol=1e-9)
            np.testing.assert_allclose(p.optical_axis, base.optical_axis, atol=1e-9)

    def test_quadruplet_group_property(self):
        _, _, cams = self.stations(seed=5)
        hyps = quadruplets(cams)
        # rotating the 90-degree member by another 90 degrees in-plane
        # gives the 180-degree member
        from nerfpose.geometry import compose, rotation_about_z

        roll90 = Pose(rotation_about_z(np.pi / 2), np.zeros(3))
        twice = compose(roll90, hyps[1])
        np.testing.assert_allclose(twice.rotation, hyps[2].rotation, atol=1e-12)


class TestAdjustDistance:
    cuboid = Cuboid3D(np.zeros(3), [0.25, 0.15, 0.0])  # planar

    def straight_on(self, dist):
        # camera looking straight at the cuboid from distance `dist`
        return Pose(np.eye(3), [0, 0, dist])

    def test_similar_triangles(self):
        pose = self.straight_on(1.0)
        w, h = projected_extent(pose, self.cuboid, K)
        assert abs(w - 100.0) < 1e-6  # 2*0.25*200/1
        c = K.cx
        bbox = BBox2D(c - 25, K.cy - 50, c + 25, K.cy + 50)  # 50 px wide target
        adjusted = adjust_distance(pose, bbox, K, self.cuboid)
        assert abs(adjusted.translation[2] - 2.0) < 0.02  # within 1%
        w2, _ = projected_extent(adjusted, self.cuboid, K)
        assert abs(w2 - 50.0) / 50.0 < 0.01

    def test_fixed_point(self):
        pose = self.straight_on(1.3)
        w, h = projected_extent(pose, self.cuboid, K)
        bbox = BBox2D(K.cx - w / 2, K.cy - h / 2, K.cx + w / 2, K.cy + h / 2)
        adjusted = adjust_distance(pose, bbox, K, self.cuboid)
        assert abs(adjusted.translation[2] - 1.3) < 1e-6

    def test_idempotent(self):
        rng = np.random.default_rng(11)
        for seed in range(10):
            initial = make_initial(seed, dist=0.8)
            cub = Cuboid3D(np.zeros(3), rng.uniform(0.05, 0.2, 3))
            bbox = BBox2D(40, 30, 90, 100)
            once = adjust_distance(initial, bbox, K, cub)
            twice = adjust_distance(once, bbox, K, cub)
            assert np.linalg.norm(once.translation - twice.translation) < 1e-6

    def test_containment(self):
        # larger-ratio rule keeps the projection inside the bbox
        initial = make_initial(7, dist=0.6)
        cub = Cuboid3D(np.zeros(3), [0.2, 0.05, 0.08])
        bbox = BBox2D(44, 44, 84, 84)
        adjusted = adjust_distance(initial, bbox, K, cub)
        w, h = projected_extent(adjusted, cub, K)
        assert w <= bbox.width * 1.01 and h <= bbox.height * 1.01
        assert max(w / bbox.width, h / bbox.height) > 0.99

    def test_behind_camera(self):
        pose = Pose(np.eye(3), [0, 0, -1.0])
        with pytest.raises(BehindCamera):
            adjust_distance(pose, BBox2D(0, 0, 10, 10), K, self.cuboid)
