"""Camera model, lens distortion, and rigid board poses.

Conventions (OpenCV-style, right handed): +X right, +Y down, +Z in front
of the camera. Pixel (0, 0) is the top-left corner; a pixel is inside an
image of width w iff 0 <= u < w (same for v). Rotations are stored as
axis-angle vectors in radians, canonicalized to magnitude <= pi;
rotation matrices are derived views, never the stored representation.

The distortion model is the radial-tangential polynomial with three
radial (k1, k2, k3) and two tangential (p1, p2) coefficients, applied to
normalized image-plane coordinates before the focal/principal-point map.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, NonOrthonormal

# Order of the flattened intrinsics vector; fixed across serialization,
# the optimizer, and parameter-error norms.
PARAM_NAMES = ("fx", "fy", "cx", "cy", "k1", "k2", "k3", "p1", "p2")


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics plus radial-tangential distortion coefficients."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def to_vector(self) -> np.ndarray:
        """Flatten to the 9-element parameter vector (see PARAM_NAMES)."""
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_vector(cls, vec) -> "CameraIntrinsics":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (9,):
            raise ValueError(f"intrinsics vector must have 9 elements, got shape {vec.shape}")
        return cls(*(float(v) for v in vec))

    def matrix(self) -> np.ndarray:
        """3x3 zero-skew camera matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def validate_against(self, image: "ImageSpec") -> None:
        """Check that the principal point lies inside the image bounds."""
        if not (0.0 <= self.cx < image.width and 0.0 <= self.cy < image.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image "
                f"{image.width}x{image.height}"
            )

    def to_json_dict(self) -> dict:
        return {"schema_version": 1, "params": [float(v) for v in self.to_vector()]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "CameraIntrinsics":
        return cls.from_vector(data["params"])


@dataclass(frozen=True)
class Pose:
    """Rigid transform of the board frame into the camera frame.

    rotation: axis-angle, radians, canonical magnitude in [0, pi].
    translation: meters.
    """

    rotation: tuple[float, float, float]
    translation: tuple[float, float, float]

    def __post_init__(self):
        rot = canonical_rotation(self.rotation)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    @property
    def rvec(self) -> np.ndarray:
        return np.array(self.rotation, dtype=float)

    @property
    def tvec(self) -> np.ndarray:
        return np.array(self.translation, dtype=float)

    def to_json_dict(self) -> dict:
        return {"rotation": list(self.rotation), "translation": list(self.translation)}

    @classmethod
    def from_json_dict(cls, data: dict) -> "Pose":
        return cls(tuple(data["rotation"]), tuple(data["translation"]))

    @classmethod
    def identity(cls) -> "Pose":
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class BoardSpec:
    """Planar calibration board described by its interior corner grid.

    Model points live on the Z=0 plane of the board frame, generated
    row-major: corner (i, j) sits at (j * square_size, i * square_size, 0).
    """

    cols: int
    rows: int
    square_size: float

    def __post_init__(self):
        if self.cols < 2 or self.rows < 2:
            raise ValueError(f"board needs at least 2x2 interior corners, got {self.cols}x{self.rows}")
        if not self.square_size > 0:
            raise ValueError(f"square_size must be positive, got {self.square_size}")

    @property
    def corner_count(self) -> int:
        return self.cols * self.rows

    def model_points(self) -> np.ndarray:
        """(cols*rows, 3) array of board-frame corner coordinates."""
        return _model_points(self.cols, self.rows, self.square_size)

    def outer_corner_indices(self) -> tuple[int, int, int, int]:
        """Row-major indices of the four extreme interior corners."""
        return (0, self.cols - 1, self.cols * (self.rows - 1), self.cols * self.rows - 1)

    def to_json_dict(self) -> dict:
        return {"cols": self.cols, "rows": self.rows, "square_size": self.square_size}

    @classmethod
    def from_json_dict(cls, data: dict) -> "BoardSpec":
        return cls(int(data["cols"]), int(data["rows"]), float(data["square_size"]))


@dataclass(frozen=True)
class ImageSpec:
    """Sensor resolution in pixels."""

    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")

    def contains(self, pixel) -> bool:
        u, v = float(pixel[0]), float(pixel[1])
        return 0.0 <= u < self.width and 0.0 <= v < self.height

    def to_json_dict(self) -> dict:
        return {"width": self.width, "height": self.height}

    @classmethod
    def from_json_dict(cls, data: dict) -> "ImageSpec":
        return cls(int(data["width"]), int(data["height"]))


@functools.lru_cache(maxsize=32)
def _model_points(cols: int, rows: int, square_size: float) -> np.ndarray:
    jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
    pts = np.zeros((rows * cols, 3))
    pts[:, 0] = jj.ravel() * square_size
    pts[:, 1] = ii.ravel() * square_size
    pts.setflags(write=False)
    return pts


def canonical_rotation(rotation) -> tuple[float, float, float]:
    """Reduce an axis-angle vector to its canonical form with angle in [0, pi]."""
    r = np.asarray(rotation, dtype=float)
    if r.shape != (3,):
        raise ValueError(f"rotation must be a 3-vector, got shape {r.shape}")
    theta = float(np.linalg.norm(r))
    if theta <= math.pi:
        return (float(r[0]), float(r[1]), float(r[2]))
    axis = r / theta
    theta = math.fmod(theta, 2.0 * math.pi)
    if theta > math.pi:
        theta -= 2.0 * math.pi  # angle goes negative, flipping the axis
    r = axis * theta
    return (float(r[0]), float(r[1]), float(r[2]))


def rotation_matrix(rvec) -> np.ndarray:
    """Rodrigues formula: axis-angle vector to 3x3 rotation matrix."""
    r = np.asarray(rvec, dtype=float)
    theta = float(np.linalg.norm(r))
    if theta < 1e-12:
        w = skew(r)
        return np.eye(3) + w  # first-order series; exact at theta == 0
    axis = r / theta
    w = skew(axis)
    return np.eye(3) + math.sin(theta) * w + (1.0 - math.cos(theta)) * (w @ w)


def rotation_vector(matrix, tol: float = 1e-6) -> np.ndarray:
    """Inverse Rodrigues: rotation matrix to canonical axis-angle vector.

    Raises NonOrthonormal when the input violates R^T R = I or det R = 1
    beyond tol.
    """
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 3):
        raise NonOrthonormal(f"expected 3x3 matrix, got shape {m.shape}")
    if np.abs(m.T @ m - np.eye(3)).max() > tol or abs(np.linalg.det(m) - 1.0) > tol:
        raise NonOrthonormal("matrix is not a proper rotation")

    cos_theta = min(1.0, max(-1.0, (np.trace(m) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta < 1e-12:
        return np.zeros(3)
    if math.pi - theta < 1e-6:
        # Near the angle-pi singularity the off-diagonal sine terms vanish;
        # recover the axis from the symmetric part instead.
        a = (m + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(a), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = a[:, k] / axis[k]
        axis = axis / np.linalg.norm(axis)
        return axis * theta
    axis = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    axis = axis / (2.0 * math.sin(theta))
    return axis * theta


def skew(v) -> np.ndarray:
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def pose_to_matrix(pose: Pose) -> np.ndarray:
    """3x4 [R | t] matrix view of a pose."""
    m = np.empty((3, 4))
    m[:, :3] = rotation_matrix(pose.rvec)
    m[:, 3] = pose.tvec
    return m


def matrix_to_pose(matrix, tol: float = 1e-6) -> Pose:
    """Inverse of pose_to_matrix; validates the rotation block."""
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 4):
        raise NonOrthonormal(f"expected 3x4 matrix, got shape {m.shape}")
    rvec = rotation_vector(m[:, :3], tol=tol)
    return Pose(tuple(rvec), tuple(m[:, 3]))


def rotation_geodesic(a: Pose, b: Pose) -> float:
    """Geodesic angle (radians) between the rotations of two poses."""
    rel = rotation_matrix(a.rvec).T @ rotation_matrix(b.rvec)
    cos_theta = min(1.0, max(-1.0, (np.trace(rel) - 1.0) / 2.0))
    return math.acos(cos_theta)


def interpolate_pose(a: Pose, b: Pose, fraction: float) -> Pose:
    """Pose a moved `fraction` of the way to pose b.

    Translation interpolates linearly; rotation follows the geodesic
    (partial application of the relative rotation).
    """
    r_a = rotation_matrix(a.rvec)
    delta = rotation_vector(r_a.T @ rotation_matrix(b.rvec))
    rot = r_a @ rotation_matrix(fraction * delta)
    t = a.tvec + fraction * (b.tvec - a.tvec)
    return Pose(tuple(rotation_vector(rot)), tuple(t))


def distort(point, intrinsics: CameraIntrinsics):
    """Apply the radial-tangential distortion operator in normalized coordinates.

    With r^2 = x^2 + y^2:
      x_d = x (1 + k1 r^2 + k2 r^4 + k3 r^6) + 2 p1 x y + p2 (r^2 + 2 x^2)
      y_d = y (1 + k1 r^2 + k2 r^4 + k3 r^6) + p1 (r^2 + 2 y^2) + 2 p2 x y

    Accepts a single (x, y) pair or an (N, 2) array; returns the same shape.
    """
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (intrinsics.k1 + r2 * (intrinsics.k2 + r2 * intrinsics.k3))
    xd = x * radial + 2.0 * intrinsics.p1 * x * y + intrinsics.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + intrinsics.p1 * (r2 + 2.0 * y * y) + 2.0 * intrinsics.p2 * x * y
    out = np.column_stack([xd, yd])
    return out[0] if single else out


def project_point(world_point, pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project one board-frame point to a pixel.

    Transforms into the camera frame, perspective-divides (eliminating the
    homogeneous scale), distorts, then applies the focal/principal map.
    Raises BehindCamera when the camera-frame depth is non-positive.
    """
    p_cam = rotation_matrix(pose.rvec) @ np.asarray(world_point, dtype=float) + pose.tvec
    if p_cam[2] <= 0.0:
        raise BehindCamera(f"point has depth {p_cam[2]:.6g} in the camera frame")
    xd, yd = distort((p_cam[0] / p_cam[2], p_cam[1] / p_cam[2]), intrinsics)
    return np.array([intrinsics.fx * xd + intrinsics.cx, intrinsics.fy * yd + intrinsics.cy])


def project_board(
    board: BoardSpec, pose: Pose, intrinsics: CameraIntrinsics, image: ImageSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Project every board corner; flag which land inside the image.

    Returns (pixels, visible) where pixels is (cols*rows, 2) ordered like
    BoardSpec.model_points() and visible is a boolean mask. Corners behind
    the camera get NaN pixels and a False flag instead of an error.
    """
    pts_cam = board.model_points() @ rotation_matrix(pose.rvec).T + pose.tvec
    z = pts_cam[:, 2]
    in_front = z > 0.0
    pixels = np.full((board.corner_count, 2), np.nan)
    if in_front.any():
        norm = pts_cam[in_front, :2] / z[in_front, None]
        d = distort(norm, intrinsics)
        pixels[in_front, 0] = intrinsics.fx * d[:, 0] + intrinsics.cx
        pixels[in_front, 1] = intrinsics.fy * d[:, 1] + intrinsics.cy
    inside = (
        (pixels[:, 0] >= 0.0)
        & (pixels[:, 0] < image.width)
        & (pixels[:, 1] >= 0.0)
        & (pixels[:, 1] < image.height)
    )  # NaN compares False, so behind-camera corners drop out here too
    return pixels, in_front & inside
