"""Camera calibration with optimized pose sets and guided capture."""

from .calibrate import (
    CalibrationResult,
    SolverConfig,
    ViewObservation,
    calibrate_views,
    mre,
    param_error,
    refine,
)
from .geometry import BoardSpec, CameraIntrinsics, ImageSpec, Pose
from .poseselect import (
    PoseSearchSpace,
    PoseSet,
    ScoreReport,
    pose_score,
    sample_space,
    score_pose_set,
    select_optimal,
)
from .session import SessionConfig, advance, begin_session, finalize, manual_capture
from .simulate import NoiseModel, SimulatedOperator, VirtualCamera, render_observations

__all__ = [
    "BoardSpec",
    "CalibrationResult",
    "CameraIntrinsics",
    "ImageSpec",
    "NoiseModel",
    "Pose",
    "PoseSearchSpace",
    "PoseSet",
    "ScoreReport",
    "SessionConfig",
    "SimulatedOperator",
    "SolverConfig",
    "ViewObservation",
    "VirtualCamera",
    "advance",
    "begin_session",
    "calibrate_views",
    "finalize",
    "manual_capture",
    "mre",
    "param_error",
    "pose_score",
    "refine",
    "render_observations",
    "sample_space",
    "score_pose_set",
    "select_optimal",
]

__version__ = "0.1.0"
