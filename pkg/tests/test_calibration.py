import numpy as np
import pytest

from poseguide.calibrate import (
    CalibrationResult,
    SolverConfig,
    ViewObservation,
    calibrate_views,
    closed_form_intrinsics,
    estimate_homography,
    homography_reprojection_error,
    load_observations,
    mre,
    param_error,
    pose_from_homography,
    refine,
    residual_jacobian,
    residuals,
    rotation_matrix_derivatives,
    save_observations,
)
from poseguide.errors import BehindCamera, DegenerateConfiguration
from poseguide.geometry import BoardSpec, CameraIntrinsics, Pose, rotation_matrix
from poseguide.simulate import NoiseModel, VirtualCamera, render_observations

from conftest import BOARD, IMAGE, NO_DISTORTION, TRUTH, diverse_poses


def render(poses, camera=TRUTH, sigma=0.0, seed=0):
    noise = NoiseModel("none", 0.0, 0) if sigma == 0 else NoiseModel("gaussian", sigma, seed)
    return render_observations(VirtualCamera(camera, IMAGE), poses, BOARD, noise)


class TestHomography:
    def test_noiseless_view_reprojects_exactly(self):
        view = render(diverse_poses(1, seed=1, camera=NO_DISTORTION), camera=NO_DISTORTION)[0]
        h = estimate_homography(view)
        assert homography_reprojection_error(h, view) < 1e-8

    def test_square_to_square_is_identity(self):
        board = BoardSpec(cols=2, rows=2, square_size=1.0)
        corners = ((0, (0.0, 0.0)), (1, (1.0, 0.0)), (2, (0.0, 1.0)), (3, (1.0, 1.0)))
        h = estimate_homography(ViewObservation(board, corners))
        assert np.allclose(h / h[2, 2], np.eye(3), atol=1e-9)

    def test_collinear_corners_degenerate(self):
        # All detections from one board row: model points lie on a line.
        pose = Pose((0.1, -0.2, 0.1), (-0.1, -0.06, 0.6))
        pts = BOARD.model_points()
        corners = []
        for idx in range(BOARD.cols):  # row 0 only
            p_cam = rotation_matrix(pose.rvec) @ pts[idx] + pose.tvec
            u = NO_DISTORTION.fx * p_cam[0] / p_cam[2] + NO_DISTORTION.cx
            v = NO_DISTORTION.fy * p_cam[1] / p_cam[2] + NO_DISTORTION.cy
            corners.append((idx, (u, v)))
        with pytest.raises(DegenerateConfiguration):
            estimate_homography(ViewObservation(BOARD, tuple(corners)))


class TestClosedForm:
    def test_noiseless_recovery_is_nearly_exact(self):
        views = render(diverse_poses(5, seed=2, camera=NO_DISTORTION), camera=NO_DISTORTION)
        est = closed_form_intrinsics([estimate_homography(v) for v in views])
        assert est.fx == pytest.approx(NO_DISTORTION.fx, rel=1e-6)
        assert est.fy == pytest.approx(NO_DISTORTION.fy, rel=1e-6)
        assert est.cx == pytest.approx(NO_DISTORTION.cx, rel=1e-6)
        assert est.cy == pytest.approx(NO_DISTORTION.cy, rel=1e-6)
        assert est.k1 == est.k2 == est.k3 == est.p1 == est.p2 == 0.0

    def test_recovery_under_noise_within_one_percent(self):
        views = render(diverse_poses(5, seed=4, camera=NO_DISTORTION), camera=NO_DISTORTION,
                       sigma=0.1, seed=11)
        est = closed_form_intrinsics([estimate_homography(v) for v in views])
        assert est.fx == pytest.approx(NO_DISTORTION.fx, rel=0.01)
        assert est.fy == pytest.approx(NO_DISTORTION.fy, rel=0.01)

    def test_all_parallel_poses_degenerate(self):
        poses = [Pose((0, 0, 0), (-0.1, -0.06, z)) for z in (0.5, 0.7, 0.9, 1.1, 1.3)]
        views = render(poses, camera=NO_DISTORTION)
        with pytest.raises(DegenerateConfiguration):
            closed_form_intrinsics([estimate_homography(v) for v in views])

    def test_pose_decomposition_matches_truth(self):
        pose = diverse_poses(1, seed=4, camera=NO_DISTORTION)[0]
        view = render([pose], camera=NO_DISTORTION)[0]
        recovered = pose_from_homography(estimate_homography(view), NO_DISTORTION)
        assert np.allclose(recovered.rvec, pose.rvec, atol=1e-6)
        assert np.allclose(recovered.tvec, pose.tvec, atol=1e-6)


class TestRefine:
    def test_noiseless_round_trip_recovers_truth(self):
        views = render(diverse_poses(20, seed=5))
        result = calibrate_views(views)
        assert result.converged
        assert param_error(result.intrinsics, TRUTH) < 1e-4
        assert result.mre < 1e-8

    def test_fixed_point_converges_immediately(self):
        views = render(diverse_poses(10, seed=6), sigma=0.1, seed=12)
        first = calibrate_views(views)
        second = refine(views, first.intrinsics, first.per_view_poses)
        assert second.converged
        assert second.iterations <= 2
        assert second.diagnostics["final_cost"] == pytest.approx(
            first.diagnostics["final_cost"], rel=1e-9
        )

    def test_noise_band_mre(self):
        views = render(diverse_poses(20, seed=7), sigma=0.1, seed=13)
        result = calibrate_views(views)
        assert result.converged
        assert 0.05 <= result.mre <= 0.2

    def test_accepted_steps_never_increase_cost(self):
        views = render(diverse_poses(10, seed=8), sigma=0.5, seed=14)
        result = calibrate_views(views)
        trace = result.diagnostics["cost_trace"]
        assert all(b <= a for a, b in zip(trace, trace[1:]))

    def test_iteration_budget_returns_unconverged(self):
        views = render(diverse_poses(6, seed=9), sigma=0.5, seed=15)
        homs = [estimate_homography(v) for v in views]
        init = closed_form_intrinsics(homs)
        poses = [pose_from_homography(h, init) for h in homs]
        result = refine(views, init, poses, SolverConfig(max_iterations=1))
        assert not result.converged
        assert result.iterations == 1

    def test_result_mre_matches_mre_function(self):
        views = render(diverse_poses(8, seed=10), sigma=0.2, seed=16)
        result = calibrate_views(views)
        assert result.mre == pytest.approx(
            mre(views, result.intrinsics, result.per_view_poses), abs=1e-12
        )

    def test_fix_k3_keeps_k3_zero(self):
        views = render(diverse_poses(10, seed=11), sigma=0.1, seed=17)
        result = calibrate_views(views, SolverConfig(fix_k3=True))
        assert result.intrinsics.k3 == 0.0

    def test_behind_camera_init_rejected(self):
        views = render(diverse_poses(4, seed=12))
        bad = [Pose(p.rotation, (p.translation[0], p.translation[1], -1.0)) for p in
               (v for v in diverse_poses(4, seed=12))]
        with pytest.raises(BehindCamera):
            refine(views, TRUTH, bad)


class TestMre:
    def test_zero_at_truth(self):
        poses = diverse_poses(5, seed=13)
        views = render(poses)
        assert mre(views, TRUTH, poses) < 1e-9

    def test_principal_point_shift_gives_unit_error(self):
        pose = Pose((0.0, 0.0, 0.0), (-0.1, -0.06, 0.6))
        views = render([pose])
        shifted = CameraIntrinsics.from_vector(TRUTH.to_vector() + np.array([0, 0, 1, 0, 0, 0, 0, 0, 0]))
        assert mre(views, shifted, [pose]) == pytest.approx(1.0, abs=1e-12)

    def test_invariant_to_view_and_corner_order(self):
        poses = diverse_poses(4, seed=14)
        views = render(poses, sigma=0.3, seed=18)
        value = mre(views, TRUTH, poses)
        shuffled_views = [
            ViewObservation(v.board, tuple(reversed(v.corners)), v.source) for v in views
        ]
        assert mre(list(reversed(shuffled_views)), TRUTH, list(reversed(poses))) == pytest.approx(
            value, abs=1e-12
        )


class TestParamError:
    def test_identical_cameras(self):
        assert param_error(TRUTH, TRUTH) == 0.0

    def test_single_component_difference(self):
        other = CameraIntrinsics.from_vector(TRUTH.to_vector() + np.array([0.088, 0, 0, 0, 0, 0, 0, 0, 0]))
        assert param_error(other, TRUTH) == pytest.approx(0.088, abs=1e-12)

    def test_hand_computed_norm(self):
        a = CameraIntrinsics(100.0, 200.0, 50.0, 60.0, 0.1, 0.2, 0.0, 0.0, 0.0)
        b = CameraIntrinsics(103.0, 196.0, 50.0, 60.0, 0.1, 0.2, 0.0, 0.0, 0.0)
        assert param_error(a, b) == pytest.approx(5.0, abs=1e-12)  # 3-4-5

    def test_metric_axioms_on_random_triples(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            vecs = [TRUTH.to_vector() + rng.normal(0, 5, size=9) for _ in range(3)]
            vecs = [np.concatenate([np.abs(v[:2]) + 1.0, v[2:]]) for v in vecs]
            a, b, c = (CameraIntrinsics.from_vector(v) for v in vecs)
            assert param_error(a, b) == pytest.approx(param_error(b, a), abs=1e-12)
            assert param_error(a, a) == 0.0
            assert param_error(a, c) <= param_error(a, b) + param_error(b, c) + 1e-12


def finite_difference_jacobian(views, intrinsics, poses, h=1e-6):
    """Independent central-difference oracle over the packed parameters."""
    base = np.concatenate(
        [intrinsics.to_vector()] + [np.concatenate([p.rvec, p.tvec]) for p in poses]
    )

    def eval_res(vec):
        intr = CameraIntrinsics.from_vector(vec[:9])
        ps = [
            Pose(tuple(vec[9 + 6 * k : 12 + 6 * k]), tuple(vec[12 + 6 * k : 15 + 6 * k]))
            for k in range(len(poses))
        ]
        return residuals(views, intr, ps)

    cols = []
    for j in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[j] += h
        minus[j] -= h
        cols.append((eval_res(plus) - eval_res(minus)) / (2 * h))
    return np.column_stack(cols)


PARAM_CLASSES = {
    "focal": [0, 1],
    "principal": [2, 3],
    "radial": [4, 5, 6],
    "tangential": [7, 8],
    "rotation": [9, 10, 11],
    "translation": [12, 13, 14],
}


class TestJacobian:
    def test_matches_finite_differences_per_class(self):
        for seed in range(5):
            poses = diverse_poses(2, seed=20 + seed)
            views = render(poses, sigma=0.2, seed=seed)
            analytic = residual_jacobian(views, TRUTH, poses).toarray()
            numeric = finite_difference_jacobian(views, TRUTH, poses)
            for name, cols in PARAM_CLASSES.items():
                a = analytic[:, cols]
                n = numeric[:, cols]
                assert np.allclose(a, n, rtol=1e-4, atol=1e-5), f"class {name}, seed {seed}"

    def test_principal_point_columns_are_unit(self):
        poses = diverse_poses(2, seed=30, camera=NO_DISTORTION)
        views = render(poses, camera=NO_DISTORTION)
        jac = residual_jacobian(views, NO_DISTORTION, poses).toarray()
        assert np.allclose(jac[0::2, 2], 1.0)  # du/dcx
        assert np.allclose(jac[1::2, 2], 0.0)
        assert np.allclose(jac[1::2, 3], 1.0)  # dv/dcy
        assert np.allclose(jac[0::2, 3], 0.0)

    def test_cross_view_pose_blocks_exactly_zero(self):
        poses = diverse_poses(3, seed=31)
        views = render(poses)
        jac = residual_jacobian(views, TRUTH, poses).toarray()
        rows_per_view = 2 * len(views[0].corners)
        for vi in range(3):
            rows = slice(vi * rows_per_view, (vi + 1) * rows_per_view)
            for vj in range(3):
                block = jac[rows, 9 + 6 * vj : 15 + 6 * vj]
                if vi != vj:
                    assert np.all(block == 0.0)
                else:
                    assert np.any(block != 0.0)

    def test_rotation_derivative_matches_fd(self):
        rng = np.random.default_rng(33)
        for _ in range(20):
            rvec = rng.uniform(-1.0, 1.0, size=3)
            ds = rotation_matrix_derivatives(rvec)
            for k in range(3):
                h = 1e-7
                plus, minus = rvec.copy(), rvec.copy()
                plus[k] += h
                minus[k] -= h
                fd = (rotation_matrix(plus) - rotation_matrix(minus)) / (2 * h)
                assert np.allclose(ds[k], fd, atol=1e-6)


class TestObservationIO:
    def test_round_trip(self, tmp_path):
        views = render(diverse_poses(3, seed=40), sigma=0.1, seed=41)
        path = tmp_path / "views.jsonl"
        save_observations(views, path)
        loaded = load_observations(path)
        assert loaded == views

    def test_view_invariants(self):
        with pytest.raises(ValueError):
            ViewObservation(BOARD, ((0, (1.0, 1.0)), (1, (2.0, 2.0)), (2, (3.0, 3.0))))
        with pytest.raises(ValueError):
            ViewObservation(BOARD, ((0, (1, 1)), (0, (2, 2)), (2, (3, 3)), (3, (4, 4))))
        with pytest.raises(ValueError):
            ViewObservation(BOARD, ((0, (1, 1)), (1, (2, 2)), (2, (3, 3)), (99, (4, 4))))

    def test_result_round_trip(self):
        views = render(diverse_poses(4, seed=42), sigma=0.1, seed=43)
        result = calibrate_views(views)
        back = CalibrationResult.from_json_dict(result.to_json_dict())
        assert back.intrinsics == result.intrinsics
        assert back.per_view_poses == result.per_view_poses
        assert back.mre == result.mre
