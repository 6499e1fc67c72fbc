"""Guided-capture session: serve targets, match detections, capture views.

The session is a single-writer state machine over immutable snapshots.
Each frame the client submits detected corners; the machine measures the
mean L2 distance of the four outermost corners against the current
target's expected positions, emits progress (including the per-corner
adjustment arrows), and captures the frame once the match has held below
threshold for the configured number of consecutive frames. After the
last capture the stored observations feed a full calibration run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibrate import CalibrationResult, SolverConfig, ViewObservation, calibrate_views
from .errors import (
    MissingCorner,
    MissingReference,
    ModeMismatch,
    NoBoardDetected,
    SessionPhaseError,
)
from .geometry import BoardSpec, CameraIntrinsics, ImageSpec, project_board
from .poseselect import PoseSet
from .simulate import NoiseModel, SimulatedBoardDriver, SimulatedOperator

PHASES = ("awaiting_match", "matched_dwelling", "capturing", "complete", "aborted")
CAPTURE_MODES = ("auto", "manual")

# Default match threshold: 15 px at 1280 wide, scaled linearly with width.
BASE_THRESHOLD_PX = 15.0
BASE_THRESHOLD_WIDTH = 1280.0


def default_reference(image: ImageSpec) -> CameraIntrinsics:
    """Fallback pinhole (80-degree horizontal FOV) used to project targets
    when no factory or prior calibration is supplied."""
    fx = (image.width / 2.0) / math.tan(math.radians(40.0))
    return CameraIntrinsics(fx=fx, fy=fx, cx=image.width / 2.0, cy=image.height / 2.0)


@dataclass(frozen=True)
class SessionConfig:
    pose_set: PoseSet
    board: BoardSpec
    image: ImageSpec
    match_threshold: float | None = None
    capture_mode: str = "auto"
    dwell_frames: int = 5
    reference_intrinsics: CameraIntrinsics | None = None

    def __post_init__(self):
        if self.capture_mode not in CAPTURE_MODES:
            raise ValueError(f"capture_mode must be one of {CAPTURE_MODES}")
        if self.dwell_frames < 1:
            raise ValueError("dwell_frames must be >= 1")
        if self.match_threshold is None:
            object.__setattr__(
                self,
                "match_threshold",
                BASE_THRESHOLD_PX * self.image.width / BASE_THRESHOLD_WIDTH,
            )
        if not self.match_threshold > 0:
            raise ValueError("match_threshold must be positive")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "pose_set": self.pose_set.to_json_dict(),
            "board": self.board.to_json_dict(),
            "image": self.image.to_json_dict(),
            "match_threshold": self.match_threshold,
            "capture_mode": self.capture_mode,
            "dwell_frames": self.dwell_frames,
            "reference_intrinsics": (
                self.reference_intrinsics.to_json_dict() if self.reference_intrinsics else None
            ),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "SessionConfig":
        ref = data.get("reference_intrinsics")
        return cls(
            pose_set=PoseSet.from_json_dict(data["pose_set"]),
            board=BoardSpec.from_json_dict(data["board"]),
            image=ImageSpec.from_json_dict(data["image"]),
            match_threshold=data["match_threshold"],
            capture_mode=data["capture_mode"],
            dwell_frames=int(data["dwell_frames"]),
            reference_intrinsics=CameraIntrinsics.from_json_dict(ref) if ref else None,
        )


@dataclass(frozen=True)
class TargetPose:
    """One guidance target: where every corner should appear on screen."""

    index: int
    expected_corners: tuple[tuple[float, float], ...]
    outer_four: tuple[int, int, int, int]

    def expected_outer(self) -> np.ndarray:
        return np.array([self.expected_corners[i] for i in self.outer_four])


# --- session events (the line-delimited log vocabulary) --------------------

@dataclass(frozen=True)
class NoBoard:
    frame_token: str


@dataclass(frozen=True)
class MatchProgress:
    distance: float
    adjustments: tuple[tuple[float, float], ...]
    dwell_count: int


@dataclass(frozen=True)
class Capture:
    target_index: int
    frame_token: str


@dataclass(frozen=True)
class Completed:
    captured: int


_EVENT_TYPES = {"no_board": NoBoard, "match_progress": MatchProgress,
                "capture": Capture, "completed": Completed}
_EVENT_NAMES = {cls: name for name, cls in _EVENT_TYPES.items()}


def event_to_dict(event) -> dict:
    d = {"event": _EVENT_NAMES[type(event)]}
    if isinstance(event, NoBoard):
        d["frame_token"] = event.frame_token
    elif isinstance(event, MatchProgress):
        d.update(
            distance=event.distance,
            adjustments=[list(a) for a in event.adjustments],
            dwell_count=event.dwell_count,
        )
    elif isinstance(event, Capture):
        d.update(target_index=event.target_index, frame_token=event.frame_token)
    elif isinstance(event, Completed):
        d["captured"] = event.captured
    return d


def event_from_dict(data: dict):
    kind = data["event"]
    if kind == "no_board":
        return NoBoard(data["frame_token"])
    if kind == "match_progress":
        return MatchProgress(
            data["distance"],
            tuple(tuple(a) for a in data["adjustments"]),
            data["dwell_count"],
        )
    if kind == "capture":
        return Capture(data["target_index"], data["frame_token"])
    if kind == "completed":
        return Completed(data["captured"])
    raise ValueError(f"unknown event type {kind!r}")


def write_event_log(events, path) -> None:
    with open(path, "w") as fh:
        for event in events:
            fh.write(json.dumps(event_to_dict(event), sort_keys=True) + "\n")


def read_event_log(path) -> list:
    return [
        event_from_dict(json.loads(line))
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]


@dataclass(frozen=True)
class SessionState:
    """Immutable snapshot of guidance progress."""

    config: SessionConfig
    targets: tuple[TargetPose, ...]
    phase: str = "awaiting_match"
    current_target: int = 0
    captured: tuple[ViewObservation, ...] = ()
    last_match_distance: float | None = None
    adjustment: tuple[tuple[float, float], ...] | None = None
    dwell_count: int = 0
    used_default_reference: bool = False

    @property
    def total_targets(self) -> int:
        return len(self.targets)

    @property
    def is_live(self) -> bool:
        return self.phase not in ("complete", "aborted")


def make_targets(
    pose_set: PoseSet, board: BoardSpec, intrinsics: CameraIntrinsics, image: ImageSpec
) -> tuple[TargetPose, ...]:
    """Project every pose of the set into expected on-screen corner tracks.

    Raises MissingReference when called without intrinsics, and ValueError
    when a target's outermost corners do not land inside the image: the
    match criterion averages exactly those corners, so an off-screen one
    makes the target unmatchable (sample guidance sets with
    visibility="outer4" to avoid this).
    """
    if intrinsics is None:
        raise MissingReference("target projection requires reference intrinsics")
    outer = board.outer_corner_indices()
    targets = []
    for index, pose in enumerate(pose_set.poses):
        pixels, visible = project_board(board, pose, intrinsics, image)
        if not visible[list(outer)].all():
            raise ValueError(
                f"target {index} has outermost corners off screen and can never match"
            )
        targets.append(
            TargetPose(
                index=index,
                expected_corners=tuple((float(u), float(v)) for u, v in pixels),
                outer_four=outer,
            )
        )
    return tuple(targets)


def begin_session(config: SessionConfig) -> SessionState:
    """Open a session at target 0 with no captures.

    Without reference intrinsics, a default pinhole derived from the
    image size projects the targets and the state is flagged as running
    on a default reference.
    """
    if len(config.pose_set.poses) == 0:
        raise ValueError("pose set must be nonempty")
    reference = config.reference_intrinsics
    used_default = reference is None
    if used_default:
        reference = default_reference(config.image)
    targets = make_targets(config.pose_set, config.board, reference, config.image)
    return SessionState(config=config, targets=targets, used_default_reference=used_default)


def match_distance(detected_corners, target: TargetPose) -> float:
    """Mean L2 pixel distance of the four outermost corners from target.

    Raises MissingCorner naming the first absent outer corner index.
    """
    detected = dict(detected_corners)
    total = 0.0
    for idx in target.outer_four:
        if idx not in detected:
            raise MissingCorner(idx)
        du = detected[idx][0] - target.expected_corners[idx][0]
        dv = detected[idx][1] - target.expected_corners[idx][1]
        total += math.hypot(du, dv)
    return total / 4.0


def _adjustments(detected: dict, target: TargetPose) -> tuple[tuple[float, float], ...]:
    # expected - detected: the on-screen arrow from where the corner is
    # toward where it should go.
    return tuple(
        (
            target.expected_corners[i][0] - detected[i][0],
            target.expected_corners[i][1] - detected[i][1],
        )
        for i in target.outer_four
    )


def _capture_observation(state: SessionState, detected: dict, distance: float) -> ViewObservation:
    corners = tuple(sorted(detected.items()))
    return ViewObservation(
        board=state.config.board,
        corners=corners,
        source="live",
        meta=(("match_distance", distance), ("target_index", float(state.current_target))),
    )


def _advance_after_capture(state: SessionState, obs: ViewObservation):
    captured = state.captured + (obs,)
    done = len(captured) == state.total_targets
    return replace(
        state,
        captured=captured,
        current_target=min(state.current_target + 1, state.total_targets - 1) if not done
        else state.current_target,
        phase="complete" if done else "awaiting_match",
        dwell_count=0,
        adjustment=None,
        last_match_distance=None,
    ), done


def advance(state: SessionState, detected_corners, frame_token: str):
    """Feed one frame of detections; returns (new_state, events).

    A pure transition: the same state and inputs always produce the same
    outputs. Missing outer corners yield a NoBoard event, not an error.
    """
    if not state.is_live:
        raise SessionPhaseError(f"session is {state.phase}")
    detected = dict(detected_corners)
    target = state.targets[state.current_target]
    try:
        distance = match_distance(detected, target)
    except MissingCorner:
        return (
            replace(state, phase="awaiting_match", dwell_count=0,
                    last_match_distance=None, adjustment=None),
            [NoBoard(frame_token)],
        )

    adjustments = _adjustments(detected, target)
    matched = distance < state.config.match_threshold
    dwell = state.dwell_count + 1 if matched else 0

    if matched and state.config.capture_mode == "auto" and dwell >= state.config.dwell_frames:
        obs = _capture_observation(state, detected, distance)
        new_state, done = _advance_after_capture(state, obs)
        events = [Capture(target.index, frame_token)]
        if done:
            events.append(Completed(len(new_state.captured)))
        return new_state, events

    return (
        replace(
            state,
            phase="matched_dwelling" if matched else "awaiting_match",
            dwell_count=dwell,
            last_match_distance=distance,
            adjustment=adjustments,
        ),
        [MatchProgress(distance, adjustments, dwell)],
    )


def manual_capture(state: SessionState, detected_corners, frame_token: str):
    """Capture the current frame on operator request, regardless of match.

    Requires manual capture mode and a fully detected board; the match
    distance at the moment of capture is recorded in the observation
    metadata.
    """
    if not state.is_live:
        raise SessionPhaseError(f"session is {state.phase}")
    if state.config.capture_mode != "manual":
        raise ModeMismatch("manual capture requested in auto mode")
    detected = dict(detected_corners)
    if len(detected) != state.config.board.corner_count:
        raise NoBoardDetected(
            f"need all {state.config.board.corner_count} corners, got {len(detected)}"
        )
    target = state.targets[state.current_target]
    distance = match_distance(detected, target)
    obs = _capture_observation(state, detected, distance)
    new_state, done = _advance_after_capture(state, obs)
    events = [Capture(target.index, frame_token)]
    if done:
        events.append(Completed(len(new_state.captured)))
    return new_state, events


def abort_session(state: SessionState) -> SessionState:
    if not state.is_live:
        return state
    return replace(state, phase="aborted")


def finalize(state: SessionState, solver: SolverConfig = SolverConfig()) -> CalibrationResult:
    """Calibrate from the captured observations; session must be complete."""
    if state.phase != "complete":
        raise SessionPhaseError(f"cannot finalize a session in phase {state.phase!r}")
    return calibrate_views(list(state.captured), solver)


# ---------------------------------------------------------------------------
# Simulated end-to-end driver
# ---------------------------------------------------------------------------

@dataclass
class SessionRun:
    state: SessionState
    events: list = field(default_factory=list)
    frames: int = 0


def drive_session(
    config: SessionConfig,
    operator: SimulatedOperator,
    detector_noise: NoiseModel,
    camera: CameraIntrinsics | None = None,
    initial_offset: tuple[float, float, float] = (0.06, 0.04, 0.08),
    max_ticks: int = 20000,
) -> SessionRun:
    """Run a whole session with the simulated operator standing in for the
    human: converge on each target in turn, captures included.

    `camera` is the physical camera observing the board (the truth being
    calibrated); it defaults to the session's reference intrinsics.
    """
    state = begin_session(config)
    camera = camera or config.reference_intrinsics or default_reference(config.image)
    driver = SimulatedBoardDriver(
        config.pose_set, config.board, config.image, camera,
        operator, detector_noise, initial_offset,
    )
    events: list = []
    ticks = 0
    while state.is_live and ticks < max_ticks:
        corners = driver.tick(state.current_target)
        state, new_events = advance(state, corners, f"frame-{ticks}")
        events.extend(new_events)
        ticks += 1
    return SessionRun(state=state, events=events, frames=ticks)
