import numpy as np
import pytest

from poseguide.geometry import BoardSpec, CameraIntrinsics, ImageSpec, Pose, project_board
from poseguide.simulate import VirtualCamera

BOARD = BoardSpec(cols=9, rows=6, square_size=0.025)
IMAGE = ImageSpec(1280, 800)
TRUTH = CameraIntrinsics(
    fx=762.78, fy=692.82, cx=640.0, cy=400.0,
    k1=-0.25, k2=0.06, k3=0.0, p1=0.0008, p2=-0.0005,
)
NO_DISTORTION = CameraIntrinsics(fx=762.78, fy=692.82, cx=640.0, cy=400.0)


def diverse_poses(n, seed, camera=TRUTH, board=BOARD, image=IMAGE, require_full=True):
    """Seeded rejection sampler for varied, visible board poses."""
    rng = np.random.default_rng(seed)
    center = (-0.5 * (board.cols - 1) * board.square_size,
              -0.5 * (board.rows - 1) * board.square_size)
    poses = []
    attempts = 0
    while len(poses) < n:
        attempts += 1
        if attempts > 500 * n:
            raise RuntimeError("could not find enough visible poses")
        rot = (rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.8, 0.8))
        z = rng.uniform(0.45, 1.0)
        tx = center[0] + rng.uniform(-0.12, 0.12)
        ty = center[1] + rng.uniform(-0.10, 0.10)
        pose = Pose(rot, (tx, ty, z))
        _, visible = project_board(board, pose, camera, image)
        if (visible.all() if require_full else visible.sum() >= 4):
            poses.append(pose)
    return poses


@pytest.fixture
def truth_camera():
    return VirtualCamera(truth=TRUTH, image=IMAGE)


@pytest.fixture
def board():
    return BOARD
