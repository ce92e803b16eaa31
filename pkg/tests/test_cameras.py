"""Camera model tests: look-at construction, pinhole rays, slab spans."""

import numpy as np
import pytest

from monofield.cameras import (
    CameraIntrinsics,
    CameraPose,
    Ray,
    camera_rays,
    format_camera,
    intrinsics_for_fov,
    load_cameras,
    look_at,
    parse_camera,
    pixel_to_ray,
    ray_box_spans,
    save_cameras,
)


def identity_pose(translation=(0.0, 0.0, 0.0)):
    return CameraPose(rotation=np.eye(3), translation=np.asarray(translation, float))


class TestIntrinsics:
    def test_fov_focal_length(self):
        intr = intrinsics_for_fov(64, 64, 90.0)
        np.testing.assert_allclose(intr.fy, 32.0, rtol=1e-12)
        assert intr.cx == 32.0 and intr.cy == 32.0

    @pytest.mark.parametrize(
        "kw",
        [
            {"fx": 0.0},
            {"fy": -1.0},
            {"cx": 64.0},
            {"cy": -0.1},
        ],
    )
    def test_invalid_rejected(self, kw):
        base = dict(fx=50.0, fy=50.0, cx=32.0, cy=32.0, width=64, height=64)
        base.update(kw)
        with pytest.raises(ValueError):
            CameraIntrinsics(**base)


class TestPose:
    def test_lookat_is_proper_rotation_aimed_at_target(self):
        rng = np.random.default_rng(60)
        for _ in range(50):
            pos = rng.uniform(-3, 3, 3)
            if np.linalg.norm(pos) < 0.5:
                continue
            pose = look_at(pos, np.zeros(3))
            r = pose.rotation
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
            np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-12)
            # camera z axis (third column) points from camera to origin
            z = r[:, 2]
            np.testing.assert_allclose(
                z, -pos / np.linalg.norm(pos), atol=1e-9
            )

    def test_lookat_camera_up_is_world_up_projected(self):
        pose = look_at([3.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        # y-down convention: camera y axis opposes world up
        np.testing.assert_allclose(pose.rotation[:, 1], [0, -1, 0], atol=1e-12)

    def test_degenerate_lookat_rejected(self):
        with pytest.raises(ValueError, match="target"):
            look_at([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="parallel"):
            look_at([0.0, 2.0, 0.0], [0.0, 0.0, 0.0])  # looking along -up

    def test_reflection_rejected(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="det"):
            CameraPose(rotation=r, translation=np.zeros(3))

    def test_non_orthonormal_rejected(self):
        r = np.eye(3)
        r[0, 1] = 1e-6
        with pytest.raises(ValueError, match="orthonormal"):
            CameraPose(rotation=r, translation=np.zeros(3))


class TestRays:
    INTR = CameraIntrinsics(fx=50.0, fy=50.0, cx=32.0, cy=24.0, width=64, height=48)

    def test_principal_point_gives_optical_axis(self):
        ray = pixel_to_ray(self.INTR, identity_pose((0, 0, -3.0)), (32.0, 24.0),
                           -1.0, 1.0)
        np.testing.assert_allclose(ray.direction, [0, 0, 1], atol=1e-15)

    def test_one_focal_length_right_gives_45_degrees(self):
        wide = CameraIntrinsics(fx=50.0, fy=50.0, cx=60.0, cy=24.0,
                                width=128, height=48)
        ray = pixel_to_ray(wide, identity_pose((0, 0, -3.0)),
                           (60.0 + 50.0, 24.0), -1.0, 1.0)
        np.testing.assert_allclose(ray.direction, [1, 0, 1] / np.sqrt(2), atol=1e-12)

    def test_axial_ray_unit_box_spans(self):
        ray = pixel_to_ray(self.INTR, identity_pose((0, 0, -3.0)), (32.0, 24.0),
                           -1.0, 1.0)
        assert ray.hit
        np.testing.assert_allclose([ray.t_near, ray.t_far], [2.0, 4.0], atol=1e-12)

    def test_miss_is_flagged(self):
        pose = identity_pose((0, 0, 3.0))  # looking +z away from the box
        ray = pixel_to_ray(self.INTR, pose, (32.0, 24.0), -1.0, 1.0)
        assert not ray.hit

    def test_origin_inside_box_clamps_to_positive(self):
        tn, tf, hit = ray_box_spans([[0.0, 0.0, 0.0]], [[0.0, 0.0, 1.0]], -1, 1)
        assert hit[0] and tn[0] == pytest.approx(1e-4) and tf[0] == pytest.approx(1.0)

    def test_parallel_ray_outside_slab_misses(self):
        tn, tf, hit = ray_box_spans([[0.0, 2.0, -5.0]], [[0.0, 0.0, 1.0]], -1, 1)
        assert not hit[0]

    def test_camera_rays_cover_image_row_major(self):
        origins, dirs, tn, tf, hit = camera_rays(
            self.INTR, identity_pose((0, 0, -3.0)), -1.0, 1.0
        )
        assert dirs.shape == (64 * 48, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
        # the ray at row-major index 24*64+32 belongs to pixel (x=32, y=24),
        # whose center is (32.5, 24.5)
        center = pixel_to_ray(self.INTR, identity_pose((0, 0, -3.0)),
                              (32.5, 24.5), -1.0, 1.0)
        np.testing.assert_allclose(dirs[24 * 64 + 32], center.direction, atol=1e-15)

    def test_ray_validation(self):
        with pytest.raises(ValueError, match="unit"):
            Ray(origin=np.zeros(3), direction=np.array([0, 0, 2.0]),
                t_near=0.0, t_far=1.0)
        with pytest.raises(ValueError, match="t_near"):
            Ray(origin=np.zeros(3), direction=np.array([0, 0, 1.0]),
                t_near=2.0, t_far=1.0)

    def test_out_of_bounds_pixel_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            pixel_to_ray(self.INTR, identity_pose(), (100.0, 0.0), -1, 1)


class TestCameraFile:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(61)
        cams = []
        for i in range(5):
            intr = CameraIntrinsics(
                fx=50 + rng.random(), fy=51 + rng.random(),
                cx=31.5, cy=23.5, width=64, height=48,
            )
            pos = rng.uniform(-3, 3, 3)
            pos[2] -= 4.0
            cams.append((intr, look_at(pos, np.zeros(3))))
        path = tmp_path / "cameras.txt"
        save_cameras(path, cams)
        loaded = load_cameras(path)
        assert len(loaded) == 5
        for (i1, p1), (i2, p2) in zip(cams, loaded):
            assert i1 == i2
            np.testing.assert_array_equal(p1.rotation, p2.rotation)
            np.testing.assert_array_equal(p1.translation, p2.translation)

    def test_record_field_count(self):
        line = format_camera(
            CameraIntrinsics(fx=50, fy=50, cx=32, cy=24, width=64, height=48),
            identity_pose((0, 0, -3)),
        )
        assert len(line.split()) == 19
        intr, pose = parse_camera(line)
        assert intr.width == 64

    def test_malformed_record_reports_line(self, tmp_path):
        path = tmp_path / "cameras.txt"
        path.write_text("1 2 3\n")
        with pytest.raises(ValueError, match="cameras.txt:1"):
            load_cameras(path)

    def test_unknown_convention_rejected(self):
        line = format_camera(
            CameraIntrinsics(fx=50, fy=50, cx=32, cy=24, width=64, height=48),
            identity_pose(),
        ).rsplit(" ", 1)[0] + " zup-leftish"
        with pytest.raises(ValueError, match="convention"):
            parse_camera(line)

    def test_comments_and_blanks_skipped(self, tmp_path):
        line = format_camera(
            CameraIntrinsics(fx=50, fy=50, cx=32, cy=24, width=64, height=48),
            identity_pose((0, 0, -3)),
        )
        path = tmp_path / "cameras.txt"
        path.write_text(f"# header\n\n{line}\n")
        assert len(load_cameras(path)) == 1
