"""Virtual camera and simulated operator for hardware-free experiments.

Everything here is seed-deterministic: all randomness flows from explicit
seeds, and per-view noise streams are derived children of the model seed
so views can be rendered in any order (or in parallel) with identical
results.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import ViewObservation
from .errors import InsufficientVisibility
from .geometry import (
    BoardSpec,
    CameraIntrinsics,
    ImageSpec,
    Pose,
    interpolate_pose,
    project_board,
)

NOISE_KINDS = ("none", "gaussian")


def derive_seed(*components: int) -> int:
    """Mix integer components into one reproducible child seed."""
    state = np.random.SeedSequence([int(c) & 0xFFFFFFFF for c in components]).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class VirtualCamera:
    """Ground-truth camera used to synthesize corner observations."""

    truth: CameraIntrinsics
    image: ImageSpec

    def __post_init__(self):
        self.truth.validate_against(self.image)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "intrinsics": self.truth.to_json_dict(),
            "image": self.image.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "VirtualCamera":
        return cls(
            truth=CameraIntrinsics.from_json_dict(data["intrinsics"]),
            image=ImageSpec.from_json_dict(data["image"]),
        )


@dataclass(frozen=True)
class NoiseModel:
    """Detector noise applied to synthesized corner pixels."""

    kind: str = "gaussian"
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind == "none" and self.sigma != 0:
            object.__setattr__(self, "sigma", 0.0)

    def reseeded(self, seed: int) -> "NoiseModel":
        return NoiseModel(self.kind, self.sigma, seed)

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "seed": self.seed}

    @classmethod
    def from_json_dict(cls, data: dict) -> "NoiseModel":
        return cls(data["kind"], float(data["sigma"]), int(data["seed"]))


@dataclass
class SimulatedOperator:
    """Stand-in for the human holding the board during a guided session.

    Each tick moves the whole corner track step_fraction of the way to
    the target. Jitter models hand tremor: one shared 2-vector per tick
    is added to every corner, since a shaking hand moves the board as a
    unit rather than individual corners.
    """

    step_fraction: float = 0.3
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.step_fraction <= 1.0):
            raise ValueError("step_fraction must be in (0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        self._rng = np.random.default_rng(self.seed)

    def tremor(self) -> np.ndarray:
        """One tick's hand-tremor offset in pixels (zero when jitter is 0)."""
        if self.jitter == 0:
            return np.zeros(2)
        return self._rng.normal(0.0, self.jitter, size=2)


def operator_tick(op: SimulatedOperator, current_corners, target_corners) -> np.ndarray:
    """Advance the operator one frame toward the target corner track."""
    current = np.asarray(current_corners, dtype=float)
    target = np.asarray(target_corners, dtype=float)
    if current.shape != target.shape:
        raise ValueError("corner tracks must be aligned by index")
    step = current + op.step_fraction * (target - current)
    if op.jitter > 0:
        step = step + op.tremor()
    return step


class SimulatedBoardDriver:
    """Frame-by-frame corner detections from a simulated operator.

    Models the human side of a guided session: a physical board pose
    converging on the current target pose, with hand tremor displacing
    the board laterally (jitter is specified in pixels and converted at
    the board's depth) and detector noise on the projected corners.
    Every frame is therefore an exact projection of a real board pose
    plus sub-pixel detection error.
    """

    def __init__(
        self,
        target_poses,
        board: BoardSpec,
        image: ImageSpec,
        camera: CameraIntrinsics,
        operator: SimulatedOperator,
        noise: NoiseModel,
        initial_offset=(0.06, 0.04, 0.08),
    ):
        self.targets = list(getattr(target_poses, "poses", target_poses))
        self.board = board
        self.image = image
        self.camera = camera
        self.operator = operator
        self.noise = noise
        self.rng = np.random.default_rng(noise.seed)
        first = self.targets[0]
        self.held = Pose(
            first.rotation, tuple(np.asarray(first.translation) + initial_offset)
        )

    def tick(self, target_index: int):
        """Advance one frame toward the given target; return detections."""
        self.held = interpolate_pose(
            self.held, self.targets[target_index], self.operator.step_fraction
        )
        shown = self.held
        if self.operator.jitter > 0:
            tremor = self.operator.tremor()
            z = self.held.translation[2]
            shown = Pose(
                self.held.rotation,
                (
                    self.held.translation[0] + tremor[0] * z / self.camera.fx,
                    self.held.translation[1] + tremor[1] * z / self.camera.fy,
                    z,
                ),
            )
        pixels, visible = project_board(self.board, shown, self.camera, self.image)
        if self.noise.kind == "gaussian" and self.noise.sigma > 0:
            pixels = pixels + self.rng.normal(0.0, self.noise.sigma, size=pixels.shape)
        return tuple(
            (int(i), (float(pixels[i, 0]), float(pixels[i, 1])))
            for i in np.flatnonzero(visible)
        )


def render_observations(
    camera: VirtualCamera, pose_set, board: BoardSpec, noise: NoiseModel
) -> list[ViewObservation]:
    """Synthesize one ViewObservation per pose.

    Only corners visible in the virtual image are "detected". Noise is
    i.i.d. per coordinate, drawn from a per-view child stream of the
    model seed. Raises InsufficientVisibility naming the first pose with
    fewer than four visible corners.
    """
    poses = getattr(pose_set, "poses", pose_set)
    children = np.random.SeedSequence(noise.seed).spawn(len(poses))
    views = []
    for idx, pose in enumerate(poses):
        pixels, visible = project_board(board, pose, camera.truth, camera.image)
        if visible.sum() < 4:
            raise InsufficientVisibility(idx, int(visible.sum()))
        indices = np.flatnonzero(visible)
        pts = pixels[indices]
        if noise.kind == "gaussian" and noise.sigma > 0:
            rng = np.random.default_rng(children[idx])
            pts = pts + rng.normal(0.0, noise.sigma, size=pts.shape)
        views.append(
            ViewObservation(
                board=board,
                corners=tuple((int(i), (float(p[0]), float(p[1]))) for i, p in zip(indices, pts)),
                source="synthetic",
            )
        )
    return views
