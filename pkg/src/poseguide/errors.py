"""Exception types shared across the toolkit."""


class PoseguideError(Exception):
    """Base class for all toolkit errors."""


class BehindCamera(PoseguideError):
    """A point to be projected has non-positive depth in the camera frame."""


class NonOrthonormal(PoseguideError):
    """A matrix expected to be a rotation violates orthonormality."""


class DegenerateConfiguration(PoseguideError):
    """The observation geometry does not constrain the requested estimate."""


class SingularNormalEquations(PoseguideError):
    """Damping could not rescue a rank-deficient normal-equation solve."""


class SpaceTooRestrictive(PoseguideError):
    """Rejection sampling could not find enough admissible poses."""


class AllDegenerate(PoseguideError):
    """Every candidate pose set triggered a degeneracy filter."""


class InsufficientVisibility(PoseguideError):
    """A pose keeps fewer than the minimum number of corners in view."""

    def __init__(self, pose_index: int, visible: int):
        self.pose_index = pose_index
        self.visible = visible
        super().__init__(f"pose {pose_index} keeps only {visible} corners visible")


class MissingCorner(PoseguideError):
    """A required corner index is absent from a detection set."""

    def __init__(self, corner_index: int):
        self.corner_index = corner_index
        super().__init__(f"corner {corner_index} missing from detections")


class MissingReference(PoseguideError):
    """No intrinsics are available to project guidance targets."""


class NoBoardDetected(PoseguideError):
    """A capture was requested while no full board detection is present."""


class SessionPhaseError(PoseguideError):
    """An operation was invoked in a session phase that forbids it."""


class ModeMismatch(PoseguideError):
    """A capture request does not match the session's capture mode."""


class SchemaError(PoseguideError):
    """A serialized record does not match the expected schema."""
