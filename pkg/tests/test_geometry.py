import math

import numpy as np
import pytest

from poseguide.errors import BehindCamera, NonOrthonormal
from poseguide.geometry import (
    BoardSpec,
    CameraIntrinsics,
    ImageSpec,
    Pose,
    canonical_rotation,
    distort,
    matrix_to_pose,
    pose_to_matrix,
    project_board,
    project_point,
    rotation_geodesic,
    rotation_matrix,
)

PINHOLE = CameraIntrinsics(fx=1000.0, fy=1000.0, cx=640.0, cy=400.0)
IMAGE = ImageSpec(1280, 800)
BOARD = BoardSpec(cols=9, rows=6, square_size=0.025)


class TestDistort:
    def test_origin_is_fixed_point(self):
        cam = CameraIntrinsics(800, 800, 640, 400, k1=-0.3, k2=0.1, k3=0.01, p1=0.002, p2=-0.001)
        assert np.allclose(distort((0.0, 0.0), cam), (0.0, 0.0))

    def test_pure_radial_hand_value(self):
        # 0.1 * (1 - 0.3 * 0.01) = 0.0997
        cam = CameraIntrinsics(800, 800, 640, 400, k1=-0.3)
        xd, yd = distort((0.1, 0.0), cam)
        assert xd == pytest.approx(0.0997, abs=1e-12)
        assert yd == 0.0

    def test_identity_when_coefficients_zero(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(-0.7, 0.7, size=(200, 2))
        assert np.array_equal(distort(pts, PINHOLE), pts)

    def test_tangential_terms(self):
        # x=0.1, y=0.2, r2=0.05: xd = x + 2*p1*x*y + p2*(r2 + 2x^2)
        cam = CameraIntrinsics(800, 800, 640, 400, p1=0.01, p2=0.02)
        xd, yd = distort((0.1, 0.2), cam)
        assert xd == pytest.approx(0.1 + 2 * 0.01 * 0.02 + 0.02 * (0.05 + 0.02), abs=1e-15)
        assert yd == pytest.approx(0.2 + 0.01 * (0.05 + 0.08) + 2 * 0.02 * 0.02, abs=1e-15)

    def test_no_fold_over_on_grid(self):
        # Moderate coefficients within |k|,|p| <= 0.5 whose radial profile
        # stays monotone on r <= 0.7: distinct grid points must stay apart
        # after distortion (no two outputs collapse onto each other).
        rng = np.random.default_rng(11)
        xs = np.linspace(-0.495, 0.495, 15)
        grid = np.array([(x, y) for x in xs for y in xs])  # r <= 0.7
        spacing = xs[1] - xs[0]
        for _ in range(20):
            while True:
                k = rng.uniform(-0.5, 0.5, size=3)
                p = rng.uniform(-0.1, 0.1, size=2)
                r = np.linspace(0.0, 0.7, 200)
                dgdr = 1 + 3 * k[0] * r**2 + 5 * k[1] * r**4 + 7 * k[2] * r**6
                if dgdr.min() > 0.05:
                    break
            cam = CameraIntrinsics(800, 800, 640, 400, k[0], k[1], k[2], p[0], p[1])
            out = distort(grid, cam)
            diff = out[:, None, :] - out[None, :, :]
            dist = np.sqrt((diff**2).sum(axis=2))
            np.fill_diagonal(dist, np.inf)
            assert dist.min() > 0.01 * spacing


class TestProjectPoint:
    def test_optical_axis_hits_principal_point(self):
        px = project_point((0.0, 0.0, 1.0), Pose.identity(), PINHOLE)
        assert np.allclose(px, (640.0, 400.0))

    def test_lateral_offset(self):
        px = project_point((0.1, 0.0, 1.0), Pose.identity(), PINHOLE)
        assert np.allclose(px, (740.0, 400.0))

    def test_radial_distortion_composes(self):
        cam = CameraIntrinsics(1000.0, 1000.0, 640.0, 400.0, k1=-0.3)
        px = project_point((0.1, 0.0, 1.0), Pose.identity(), cam)
        assert np.allclose(px, (739.7, 400.0), atol=1e-9)

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCamera):
            project_point((0.0, 0.0, -1.0), Pose.identity(), PINHOLE)
        with pytest.raises(BehindCamera):
            project_point((0.0, 0.0, 0.0), Pose.identity(), PINHOLE)

    def test_scale_invariance_under_identity_pose(self):
        cam = CameraIntrinsics(900.0, 880.0, 620.0, 390.0, k1=-0.2, k2=0.05, p1=0.001, p2=-0.002)
        rng = np.random.default_rng(3)
        for _ in range(100):
            pt = rng.uniform([-0.3, -0.3, 0.5], [0.3, 0.3, 2.0])
            lam = rng.uniform(0.1, 10.0)
            a = project_point(pt, Pose.identity(), cam)
            b = project_point(pt * lam, Pose.identity(), cam)
            assert np.allclose(a, b, atol=1e-9)


class TestProjectBoard:
    def test_fully_visible_board(self):
        pose = Pose((0.1, 0.05, 0.0), (-0.1, -0.06, 0.6))
        pixels, visible = project_board(BOARD, pose, PINHOLE, IMAGE)
        assert pixels.shape == (54, 2)
        assert visible.all()

    def test_board_behind_camera_all_invisible(self):
        pose = Pose((0.0, 0.0, 0.0), (0.0, 0.0, -1.0))
        pixels, visible = project_board(BOARD, pose, PINHOLE, IMAGE)
        assert not visible.any()
        assert np.isnan(pixels).all()

    def test_half_outside_partial_visibility(self):
        # Slide the board along +X until the analytic projection of the last
        # column leaves the frame: u = fx*(x+tx)/z + cx >= width.
        z = 0.6
        x_limit = (IMAGE.width - PINHOLE.cx) * z / PINHOLE.fx  # ~0.384 m
        tx = x_limit - 0.5 * (BOARD.cols - 1) * BOARD.square_size
        pose = Pose((0.0, 0.0, 0.0), (tx, -0.06, z))
        _, visible = project_board(BOARD, pose, PINHOLE, IMAGE)
        assert 0 < visible.sum() < 54

    def test_ordering_matches_model_points(self):
        pose = Pose((0.0, 0.0, 0.0), (-0.1, -0.06, 0.6))
        pixels, _ = project_board(BOARD, pose, PINHOLE, IMAGE)
        for idx in (0, 8, 45, 53):
            expected = project_point(BOARD.model_points()[idx], pose, PINHOLE)
            assert np.allclose(pixels[idx], expected)


class TestPoseMatrix:
    def test_identity(self):
        m = pose_to_matrix(Pose.identity())
        assert np.allclose(m, np.hstack([np.eye(3), np.zeros((3, 1))]))

    def test_pi_about_z(self):
        m = pose_to_matrix(Pose((0.0, 0.0, math.pi), (0.0, 0.0, 0.0)))
        assert np.allclose(m[:, :3], np.diag([-1.0, -1.0, 1.0]), atol=1e-12)

    def test_round_trip_1000_random_poses(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            theta = rng.uniform(0.0, math.pi)
            pose = Pose(tuple(axis * theta), tuple(rng.uniform(-1, 1, size=3)))
            back = matrix_to_pose(pose_to_matrix(pose))
            assert np.allclose(back.rvec, pose.rvec, atol=1e-9)
            assert np.allclose(back.tvec, pose.tvec, atol=1e-9)

    def test_rotation_block_is_orthonormal(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            pose = Pose(tuple(rng.normal(size=3)), (0, 0, 0))
            r = rotation_matrix(pose.rvec)
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-10
            assert abs(np.linalg.det(r) - 1.0) < 1e-10

    def test_non_orthonormal_rejected(self):
        bad = np.hstack([np.eye(3) * 1.01, np.zeros((3, 1))])
        with pytest.raises(NonOrthonormal):
            matrix_to_pose(bad)

    def test_canonicalization_wraps_large_angles(self):
        pose = Pose((0.0, 0.0, 1.5 * math.pi), (0.0, 0.0, 0.0))
        assert np.linalg.norm(pose.rvec) <= math.pi + 1e-12
        # same rotation as the uncanonical input
        assert np.allclose(
            rotation_matrix(pose.rvec), rotation_matrix((0.0, 0.0, 1.5 * math.pi)), atol=1e-12
        )

    def test_geodesic_distance(self):
        a = Pose((0.0, 0.0, 0.0), (0, 0, 1))
        b = Pose((0.0, 0.3, 0.0), (0, 0, 2))
        assert rotation_geodesic(a, b) == pytest.approx(0.3, abs=1e-12)
        assert rotation_geodesic(a, a) == pytest.approx(0.0, abs=1e-12)


class TestTypes:
    def test_intrinsics_vector_order(self):
        cam = CameraIntrinsics(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0)
        assert np.array_equal(cam.to_vector(), np.arange(1.0, 10.0))
        assert CameraIntrinsics.from_vector(cam.to_vector()) == cam

    def test_intrinsics_json_round_trip(self):
        cam = CameraIntrinsics(762.8, 692.8, 640.0, 400.0, k1=-0.38, k2=0.24)
        assert CameraIntrinsics.from_json_dict(cam.to_json_dict()) == cam

    def test_invalid_focal_rejected(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 1000.0, 640.0, 400.0)
        with pytest.raises(ValueError):
            CameraIntrinsics(1000.0, -5.0, 640.0, 400.0)

    def test_principal_point_validation(self):
        CameraIntrinsics(800, 800, 640, 400).validate_against(IMAGE)
        with pytest.raises(ValueError):
            CameraIntrinsics(800, 800, 2000, 400).validate_against(IMAGE)

    def test_board_model_points_row_major(self):
        board = BoardSpec(cols=3, rows=2, square_size=0.5)
        pts = board.model_points()
        assert pts.shape == (6, 3)
        assert np.allclose(pts[0], (0.0, 0.0, 0.0))
        assert np.allclose(pts[1], (0.5, 0.0, 0.0))  # along columns first
        assert np.allclose(pts[3], (0.0, 0.5, 0.0))  # next row
        assert np.allclose(pts[:, 2], 0.0)

    def test_board_outer_corners(self):
        assert BOARD.outer_corner_indices() == (0, 8, 45, 53)

    def test_board_validation(self):
        with pytest.raises(ValueError):
            BoardSpec(cols=1, rows=6, square_size=0.025)
        with pytest.raises(ValueError):
            BoardSpec(cols=9, rows=6, square_size=0.0)

    def test_pose_json_round_trip(self):
        pose = Pose((0.1, -0.2, 0.3), (0.4, 0.5, 0.6))
        assert Pose.from_json_dict(pose.to_json_dict()) == pose

    def test_canonical_rotation_plain_function(self):
        r = canonical_rotation((0.0, 2.5 * math.pi, 0.0))
        assert np.linalg.norm(r) <= math.pi + 1e-12
