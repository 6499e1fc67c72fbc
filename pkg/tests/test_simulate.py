import numpy as np
import pytest

from poseguide.calibrate import mre
from poseguide.errors import InsufficientVisibility
from poseguide.geometry import Pose
from poseguide.simulate import (
    NoiseModel,
    SimulatedOperator,
    VirtualCamera,
    derive_seed,
    operator_tick,
    render_observations,
)

from conftest import BOARD, IMAGE, TRUTH, diverse_poses


class TestVirtualCamera:
    def test_truth_validated_against_image(self):
        with pytest.raises(ValueError):
            VirtualCamera(
                truth=TRUTH.from_vector(
                    np.array([800, 800, 5000, 400, 0, 0, 0, 0, 0], dtype=float)
                ),
                image=IMAGE,
            )

    def test_json_round_trip(self):
        cam = VirtualCamera(TRUTH, IMAGE)
        assert VirtualCamera.from_json_dict(cam.to_json_dict()) == cam


class TestRenderObservations:
    def test_noiseless_views_have_zero_mre(self):
        poses = diverse_poses(5, seed=80)
        views = render_observations(VirtualCamera(TRUTH, IMAGE), poses, BOARD,
                                    NoiseModel("none", 0.0, 0))
        assert mre(views, TRUTH, poses) < 1e-9

    def test_gaussian_noise_statistics(self):
        # statistical oracle on the noise stream: the noisy and noiseless
        # renders differ by N(0, sigma^2) per coordinate
        poses = diverse_poses(200, seed=81)
        camera = VirtualCamera(TRUTH, IMAGE)
        clean = render_observations(camera, poses, BOARD, NoiseModel("none", 0.0, 0))
        noisy = render_observations(camera, poses, BOARD, NoiseModel("gaussian", 0.1, 82))
        deltas = []
        for a, b in zip(clean, noisy):
            deltas.append(b.pixels - a.pixels)
        deltas = np.concatenate(deltas)
        assert deltas.shape[0] >= 10000
        assert 0.08 <= deltas.std() <= 0.12
        assert abs(deltas.mean()) < 0.005

    def test_behind_camera_pose_identified(self):
        poses = diverse_poses(3, seed=83)
        poses.insert(1, Pose((0, 0, 0), (0.0, 0.0, -1.0)))
        with pytest.raises(InsufficientVisibility) as err:
            render_observations(VirtualCamera(TRUTH, IMAGE), poses, BOARD,
                                NoiseModel("none", 0.0, 0))
        assert err.value.pose_index == 1

    def test_deterministic_per_seed(self):
        poses = diverse_poses(4, seed=84)
        camera = VirtualCamera(TRUTH, IMAGE)
        a = render_observations(camera, poses, BOARD, NoiseModel("gaussian", 0.2, 85))
        b = render_observations(camera, poses, BOARD, NoiseModel("gaussian", 0.2, 85))
        c = render_observations(camera, poses, BOARD, NoiseModel("gaussian", 0.2, 86))
        assert a == b
        assert a != c

    def test_only_visible_corners_detected(self):
        # push the board half out of frame; the observation holds fewer corners
        pose = Pose((0.0, 0.0, 0.0), (0.45, -0.06, 0.6))
        views = render_observations(VirtualCamera(TRUTH, IMAGE), [pose], BOARD,
                                    NoiseModel("none", 0.0, 0))
        assert 4 <= len(views[0].corners) < BOARD.corner_count


class TestOperatorTick:
    def test_full_step_reaches_target_exactly(self):
        op = SimulatedOperator(step_fraction=1.0, jitter=0.0, seed=0)
        current = np.zeros((10, 2))
        target = np.full((10, 2), 37.5)
        assert np.array_equal(operator_tick(op, current, target), target)

    def test_half_step_halves_distance(self):
        op = SimulatedOperator(step_fraction=0.5, jitter=0.0, seed=0)
        current = np.zeros((4, 2))
        target = np.array([[100.0, 0.0]] * 4)
        stepped = operator_tick(op, current, target)
        assert np.allclose(np.linalg.norm(stepped - target, axis=1), 50.0)

    def test_jitter_still_converges_to_threshold(self):
        op = SimulatedOperator(step_fraction=0.3, jitter=2.0, seed=7)
        current = np.zeros((54, 2)) + 400.0
        target = np.zeros((54, 2))
        for _ in range(200):
            current = operator_tick(op, current, target)
        mean_distance = np.linalg.norm(current - target, axis=1).mean()
        assert mean_distance <= 15.0

    def test_contraction_below_any_threshold_without_jitter(self):
        op = SimulatedOperator(step_fraction=0.25, jitter=0.0, seed=0)
        current = np.zeros((4, 2)) + 1000.0
        target = np.zeros((4, 2))
        for _ in range(300):
            current = operator_tick(op, current, target)
        assert np.linalg.norm(current - target, axis=1).max() < 1e-9

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            SimulatedOperator(step_fraction=0.0)
        with pytest.raises(ValueError):
            SimulatedOperator(step_fraction=0.5, jitter=-1.0)


class TestSeeds:
    def test_derive_seed_deterministic_and_sensitive(self):
        assert derive_seed(1, 2) == derive_seed(1, 2)
        assert derive_seed(1, 2) != derive_seed(2, 1)
        assert derive_seed(0) != derive_seed(1)

    def test_noise_model_validation(self):
        with pytest.raises(ValueError):
            NoiseModel("pink", 0.1, 0)
        with pytest.raises(ValueError):
            NoiseModel("gaussian", -0.1, 0)
        assert NoiseModel("none", 5.0, 0).sigma == 0.0
