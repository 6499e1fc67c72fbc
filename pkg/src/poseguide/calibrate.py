"""Intrinsic calibration from planar-board corner observations.

Pipeline: per-view DLT homographies -> closed-form intrinsics from the
absolute-conic constraints (zero skew) -> per-view pose initialization by
homography decomposition -> joint damped-least-squares refinement of
intrinsics and poses against the pixel reprojection residuals.

The refiner uses analytic derivatives throughout; finite differences
exist only in the test suite as an independent oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse

from .errors import BehindCamera, DegenerateConfiguration, SingularNormalEquations
from .geometry import (
    BoardSpec,
    CameraIntrinsics,
    Pose,
    rotation_matrix,
    rotation_vector,
    skew,
)

# Refinement stops when the gradient max-norm falls below this, or when an
# accepted step's relative cost decrease falls below cost_rel_tolerance.
GRAD_TOLERANCE = 1e-8
DAMPING_MAX = 1e12

SOURCES = ("synthetic", "live")


@dataclass(frozen=True)
class ViewObservation:
    """Detected 2D corners of one board view, paired with the board model.

    corners maps corner_index -> pixel; indices must be unique, within the
    board's grid, and number at least four (the homography minimum).
    """

    board: BoardSpec
    corners: tuple[tuple[int, tuple[float, float]], ...]
    source: str = "synthetic"
    meta: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        corners = tuple(
            (int(i), (float(p[0]), float(p[1]))) for i, p in self.corners
        )
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "meta", tuple(self.meta))
        indices = [i for i, _ in corners]
        if len(indices) < 4:
            raise ValueError(f"a view needs at least 4 corners, got {len(indices)}")
        if len(set(indices)) != len(indices):
            raise ValueError("duplicate corner indices in view")
        if min(indices) < 0 or max(indices) >= self.board.corner_count:
            raise ValueError("corner index outside board bounds")
        # Cached array views; not dataclass fields, so equality and
        # serialization still go through `corners`.
        object.__setattr__(self, "_indices", np.array(indices, dtype=int))
        object.__setattr__(self, "_pixels", np.array([p for _, p in corners], dtype=float))
        object.__setattr__(self, "_model", self.board.model_points()[self._indices])

    @property
    def indices(self) -> np.ndarray:
        return self._indices

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    def model_points(self) -> np.ndarray:
        return self._model

    def to_json_dict(self) -> dict:
        d = {
            "board": self.board.to_json_dict(),
            "corners": [[i, [u, v]] for i, (u, v) in self.corners],
            "source": self.source,
        }
        if self.meta:
            d["meta"] = dict(self.meta)
        return d

    @classmethod
    def from_json_dict(cls, data: dict) -> "ViewObservation":
        return cls(
            board=BoardSpec.from_json_dict(data["board"]),
            corners=tuple((c[0], tuple(c[1])) for c in data["corners"]),
            source=data.get("source", "synthetic"),
            meta=tuple(data.get("meta", {}).items()),
        )


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    cost_rel_tolerance: float = 1e-10
    damping_init: float = 1e-3
    fix_k3: bool = True
    fix_tangential: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.cost_rel_tolerance <= 0 or self.damping_init <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class CalibrationResult:
    intrinsics: CameraIntrinsics
    per_view_poses: tuple[Pose, ...]
    mre: float
    converged: bool
    iterations: int
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "intrinsics": self.intrinsics.to_json_dict(),
            "per_view_poses": [p.to_json_dict() for p in self.per_view_poses],
            "mre": self.mre,
            "converged": self.converged,
            "iterations": self.iterations,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "CalibrationResult":
        return cls(
            intrinsics=CameraIntrinsics.from_json_dict(data["intrinsics"]),
            per_view_poses=tuple(Pose.from_json_dict(p) for p in data["per_view_poses"]),
            mre=float(data["mre"]),
            converged=bool(data["converged"]),
            iterations=int(data["iterations"]),
            diagnostics=dict(data.get("diagnostics", {})),
        )


def save_observations(views, path) -> None:
    """Write views as line-delimited JSON, one view per line."""
    with open(path, "w") as fh:
        for view in views:
            fh.write(json.dumps(view.to_json_dict(), sort_keys=True) + "\n")


def load_observations(path) -> list[ViewObservation]:
    views = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            views.append(ViewObservation.from_json_dict(json.loads(line)))
    return views


# ---------------------------------------------------------------------------
# Linear initialization
# ---------------------------------------------------------------------------

def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: zero mean, mean distance sqrt(2)."""
    mean = pts.mean(axis=0)
    dist = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / dist if dist > 1e-12 else 1.0
    t = np.array([[s, 0.0, -s * mean[0]], [0.0, s, -s * mean[1]], [0.0, 0.0, 1.0]])
    q = pts * s + t[:2, 2]
    return q, t


def estimate_homography(view: ViewObservation) -> np.ndarray:
    """Normalized-DLT homography from board-plane (X, Y, 1) to pixels.

    Raises DegenerateConfiguration when the correspondences do not pin a
    unique homography (collinear corners leave a nullspace of dimension
    two or more).
    """
    model = view.model_points()[:, :2]
    image = view.pixels
    mn, t_model = _normalize_points(model)
    im, t_image = _normalize_points(image)

    n = len(mn)
    a = np.zeros((2 * n, 9))
    a[0::2, 0] = -mn[:, 0]
    a[0::2, 1] = -mn[:, 1]
    a[0::2, 2] = -1.0
    a[0::2, 6] = im[:, 0] * mn[:, 0]
    a[0::2, 7] = im[:, 0] * mn[:, 1]
    a[0::2, 8] = im[:, 0]
    a[1::2, 3] = -mn[:, 0]
    a[1::2, 4] = -mn[:, 1]
    a[1::2, 5] = -1.0
    a[1::2, 6] = im[:, 1] * mn[:, 0]
    a[1::2, 7] = im[:, 1] * mn[:, 1]
    a[1::2, 8] = im[:, 1]

    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-9 * sv[0]:
        raise DegenerateConfiguration("correspondences are rank-deficient (collinear corners?)")
    h = np.linalg.inv(t_image) @ vt[-1].reshape(3, 3) @ t_model
    if abs(h[2, 2]) > 1e-12:
        h = h / h[2, 2]
    return h


def homography_reprojection_error(h: np.ndarray, view: ViewObservation) -> float:
    """Mean pixel error of a homography on its own correspondences."""
    model = view.model_points()[:, :2]
    hom = np.column_stack([model, np.ones(len(model))]) @ h.T
    proj = hom[:, :2] / hom[:, 2:3]
    return float(np.sqrt(((proj - view.pixels) ** 2).sum(axis=1)).mean())


def _conic_row(h: np.ndarray, p: int, q: int) -> np.ndarray:
    # Zero-skew absolute-conic constraint row for columns p, q of H:
    # unknowns (B11, B22, B13, B23, B33).
    return np.array(
        [
            h[0, p] * h[0, q],
            h[1, p] * h[1, q],
            h[2, p] * h[0, q] + h[0, p] * h[2, q],
            h[2, p] * h[1, q] + h[1, p] * h[2, q],
            h[2, p] * h[2, q],
        ]
    )


def closed_form_intrinsics(homographies) -> CameraIntrinsics:
    """Closed-form fx, fy, cx, cy from three or more homographies.

    Distortion coefficients are returned as zero; the refiner estimates
    them. Raises DegenerateConfiguration when the constraint system is
    singular, which happens when all board poses are parallel (depth
    alone cannot separate focal length from distance).
    """
    hs = [np.asarray(h, dtype=float) for h in homographies]
    if len(hs) < 3:
        raise ValueError(f"need at least 3 homographies, got {len(hs)}")

    v = np.zeros((2 * len(hs), 5))
    for k, h in enumerate(hs):
        h = h / np.linalg.norm(h)
        v[2 * k] = _conic_row(h, 0, 1)
        v[2 * k + 1] = _conic_row(h, 0, 0) - _conic_row(h, 1, 1)

    _, sv, vt = np.linalg.svd(v)
    if sv[-2] < 1e-9 * sv[0]:
        raise DegenerateConfiguration("conic constraints are rank-deficient (all boards parallel?)")
    b11, b22, b13, b23, b33 = vt[-1]

    if abs(b11) < 1e-300 or abs(b22) < 1e-300:
        raise DegenerateConfiguration("conic solution has vanishing diagonal")
    cx = -b13 / b11
    cy = -b23 / b22
    lam = b33 - (b13 * b13 / b11 + b23 * b23 / b22)
    fx2 = lam / b11
    fy2 = lam / b22
    if not (np.isfinite(fx2) and np.isfinite(fy2)) or fx2 <= 0 or fy2 <= 0:
        raise DegenerateConfiguration("conic solution is not a valid camera")
    return CameraIntrinsics(fx=math.sqrt(fx2), fy=math.sqrt(fy2), cx=float(cx), cy=float(cy))


def pose_from_homography(h: np.ndarray, intrinsics: CameraIntrinsics) -> Pose:
    """Initial board pose from a homography and known intrinsics."""
    m = np.linalg.inv(intrinsics.matrix()) @ h
    if m[2, 2] < 0:  # choose the sign that puts the board in front
        m = -m
    scale = 2.0 / (np.linalg.norm(m[:, 0]) + np.linalg.norm(m[:, 1]))
    r1 = m[:, 0] * scale
    r2 = m[:, 1] * scale
    r = np.column_stack([r1, r2, np.cross(r1, r2)])
    u, _, vt = np.linalg.svd(r)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, 2] = -u[:, 2]
        r = u @ vt
    return Pose(tuple(rotation_vector(r, tol=1e-3)), tuple(m[:, 2] * scale))


# ---------------------------------------------------------------------------
# Residuals and analytic Jacobian
# ---------------------------------------------------------------------------

def rotation_matrix_derivatives(rvec) -> list[np.ndarray]:
    """dR/d(axis-angle component) for each of the three components."""
    w = np.asarray(rvec, dtype=float)
    theta = float(np.linalg.norm(w))
    wx = skew(w)
    basis = [skew(e) for e in np.eye(3)]
    if theta < 1e-8:
        a, b = 1.0 - theta**2 / 6.0, 0.5 - theta**2 / 24.0
        da = -w / 3.0
        db = -w / 12.0
    else:
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta**2
        ap = (theta * math.cos(theta) - math.sin(theta)) / theta**2
        bp = (theta * math.sin(theta) - 2.0 * (1.0 - math.cos(theta))) / theta**3
        da = ap * w / theta
        db = bp * w / theta
    wx2 = wx @ wx
    out = []
    for k in range(3):
        ek = basis[k]
        out.append(da[k] * wx + a * ek + db[k] * wx2 + b * (ek @ wx + wx @ ek))
    return out


def _normalized_coords(view: ViewObservation, pose: Pose):
    model = view.model_points()
    rot = rotation_matrix(pose.rvec)
    p_cam = model @ rot.T + pose.tvec
    z = p_cam[:, 2]
    if (z <= 0).any():
        raise BehindCamera("view has corners at non-positive depth")
    return model, p_cam, p_cam[:, 0] / z, p_cam[:, 1] / z


def _view_residuals(view: ViewObservation, intrinsics: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Residuals only (predicted - observed); the cheap path for trial steps."""
    _, _, x, y = _normalized_coords(view, pose)
    r2 = x * x + y * y
    radial = 1.0 + r2 * (intrinsics.k1 + r2 * (intrinsics.k2 + r2 * intrinsics.k3))
    xd = x * radial + 2.0 * intrinsics.p1 * x * y + intrinsics.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + intrinsics.p1 * (r2 + 2.0 * y * y) + 2.0 * intrinsics.p2 * x * y
    res = np.empty(2 * len(x))
    res[0::2] = intrinsics.fx * xd + intrinsics.cx - view.pixels[:, 0]
    res[1::2] = intrinsics.fy * yd + intrinsics.cy - view.pixels[:, 1]
    return res


def _view_blocks(view: ViewObservation, intrinsics: CameraIntrinsics, pose: Pose):
    """Residuals plus analytic derivative blocks for one view.

    Returns (residuals(2n,), d_intrinsics(2n,9), d_pose(2n,6)) with
    residual = predicted - observed, u rows interleaved before v rows
    per corner. Raises BehindCamera if any corner has non-positive depth.
    """
    model, p_cam, x, y = _normalized_coords(view, pose)
    z = p_cam[:, 2]
    r2 = x * x + y * y
    k1, k2, k3 = intrinsics.k1, intrinsics.k2, intrinsics.k3
    p1, p2 = intrinsics.p1, intrinsics.p2
    fx, fy = intrinsics.fx, intrinsics.fy
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y

    n = len(model)
    res = np.empty(2 * n)
    res[0::2] = fx * xd + intrinsics.cx - view.pixels[:, 0]
    res[1::2] = fy * yd + intrinsics.cy - view.pixels[:, 1]

    d_int = np.zeros((2 * n, 9))
    d_int[0::2, 0] = xd          # fx
    d_int[1::2, 1] = yd          # fy
    d_int[0::2, 2] = 1.0         # cx
    d_int[1::2, 3] = 1.0         # cy
    for col, rpow in ((4, r2), (5, r2**2), (6, r2**3)):  # k1, k2, k3
        d_int[0::2, col] = fx * x * rpow
        d_int[1::2, col] = fy * y * rpow
    d_int[0::2, 7] = fx * 2.0 * x * y                    # p1
    d_int[1::2, 7] = fy * (r2 + 2.0 * y * y)
    d_int[0::2, 8] = fx * (r2 + 2.0 * x * x)             # p2
    d_int[1::2, 8] = fy * 2.0 * x * y

    # Chain rule through the distortion and the perspective divide.
    c = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)  # d(radial)/d(r2)
    dxd_dx = radial + 2.0 * x * x * c + 2.0 * p1 * y + 6.0 * p2 * x
    dxd_dy = 2.0 * x * y * c + 2.0 * p1 * x + 2.0 * p2 * y
    dyd_dx = dxd_dy
    dyd_dy = radial + 2.0 * y * y * c + 6.0 * p1 * y + 2.0 * p2 * x

    # dP/dq for the six pose parameters: rotation columns from the
    # Rodrigues derivative, translation columns are the identity.
    dr = np.stack(rotation_matrix_derivatives(pose.rvec))  # (3, 3, 3)
    dp_rot = np.einsum("qij,nj->nqi", dr, model)            # (n, 3, 3)
    dx_dq = np.empty((n, 6))
    dy_dq = np.empty((n, 6))
    dx_dq[:, :3] = (dp_rot[:, :, 0] - x[:, None] * dp_rot[:, :, 2]) / z[:, None]
    dy_dq[:, :3] = (dp_rot[:, :, 1] - y[:, None] * dp_rot[:, :, 2]) / z[:, None]
    inv_z = 1.0 / z
    dx_dq[:, 3] = inv_z
    dx_dq[:, 4] = 0.0
    dx_dq[:, 5] = -x * inv_z
    dy_dq[:, 3] = 0.0
    dy_dq[:, 4] = inv_z
    dy_dq[:, 5] = -y * inv_z

    d_pose = np.empty((2 * n, 6))
    d_pose[0::2] = fx * (dxd_dx[:, None] * dx_dq + dxd_dy[:, None] * dy_dq)
    d_pose[1::2] = fy * (dyd_dx[:, None] * dx_dq + dyd_dy[:, None] * dy_dq)

    return res, d_int, d_pose


def residuals(views, intrinsics: CameraIntrinsics, poses) -> np.ndarray:
    """Stacked (predicted - observed) pixel residuals over all views."""
    parts = [_view_residuals(v, intrinsics, p) for v, p in zip(views, poses)]
    return np.concatenate(parts)


def _assemble(views, intrinsics: CameraIntrinsics, poses) -> tuple[np.ndarray, np.ndarray]:
    """Residual vector and dense Jacobian in one pass."""
    n_rows = 2 * sum(len(v.corners) for v in views)
    res = np.empty(n_rows)
    jac = np.zeros((n_rows, 9 + 6 * len(views)))
    row = 0
    for k, (view, pose) in enumerate(zip(views, poses)):
        r, d_int, d_pose = _view_blocks(view, intrinsics, pose)
        n = d_int.shape[0]
        res[row : row + n] = r
        jac[row : row + n, 0:9] = d_int
        jac[row : row + n, 9 + 6 * k : 15 + 6 * k] = d_pose
        row += n
    return res, jac


def _dense_jacobian(views, intrinsics: CameraIntrinsics, poses) -> np.ndarray:
    return _assemble(views, intrinsics, poses)[1]


def _skews(vecs: np.ndarray) -> np.ndarray:
    """(v, 3) vectors -> (v, 3, 3) cross-product matrices."""
    out = np.zeros((len(vecs), 3, 3))
    out[:, 0, 1] = -vecs[:, 2]
    out[:, 0, 2] = vecs[:, 1]
    out[:, 1, 0] = vecs[:, 2]
    out[:, 1, 2] = -vecs[:, 0]
    out[:, 2, 0] = -vecs[:, 1]
    out[:, 2, 1] = vecs[:, 0]
    return out


_EYE3 = np.eye(3)
_BASIS_SKEWS = _skews(np.eye(3))


def _rotations_batch(rvecs: np.ndarray, with_derivatives: bool):
    """Rodrigues rotations (v,3,3) and optionally dR/drvec (v,3,3,3)."""
    theta = np.linalg.norm(rvecs, axis=1)
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    w = _skews(rvecs)
    w2 = w @ w
    rots = _EYE3 + a[:, None, None] * w + b[:, None, None] * w2
    if not with_derivatives:
        return rots, None
    with np.errstate(invalid="ignore"):
        ap = (safe * np.cos(safe) - np.sin(safe)) / safe**2
        bp = (safe * np.sin(safe) - 2.0 * (1.0 - np.cos(safe))) / safe**3
    da = np.where(small[:, None], -rvecs / 3.0, ap[:, None] * rvecs / safe[:, None])
    db = np.where(small[:, None], -rvecs / 12.0, bp[:, None] * rvecs / safe[:, None])
    # dR/dw_k = da_k W + a E_k + db_k W^2 + b (E_k W + W E_k), stacked over k.
    dr = (
        da[:, :, None, None] * w[:, None]
        + a[:, None, None, None] * _BASIS_SKEWS[None]
        + db[:, :, None, None] * w2[:, None]
        + b[:, None, None, None]
        * (np.einsum("kij,vjl->vkil", _BASIS_SKEWS, w) + np.einsum("vij,kjl->vkil", w, _BASIS_SKEWS))
    )
    return rots, dr


class _Batch:
    """All views flattened into index arrays for the hot refinement loop.

    Row layout matches the per-view functions: views in order, corners in
    stored order, u row before v row per corner. Every view block spans
    an even number of rows, so global even/odd slicing separates u and v.
    """

    def __init__(self, views):
        self.n_views = len(views)
        self.model = np.concatenate([v.model_points() for v in views])
        self.obs = np.concatenate([v.pixels for v in views])
        counts = np.array([len(v.corners) for v in views])
        self.view_idx = np.repeat(np.arange(self.n_views), counts)
        n = len(self.model)
        # Column indices of each residual row's own pose block.
        pose_cols = 9 + 6 * self.view_idx[:, None] + np.arange(6)[None, :]
        self.pose_cols = np.repeat(pose_cols, 2, axis=0)
        self.rows = np.arange(2 * n)[:, None]
        self.n_points = n

    def _project(self, params, with_derivatives=False):
        pose_params = params[9:].reshape(self.n_views, 6)
        rvecs = pose_params[:, :3]
        tvecs = pose_params[:, 3:]
        rots, dr = _rotations_batch(rvecs, with_derivatives)
        p_cam = (
            np.einsum("nij,nj->ni", rots[self.view_idx], self.model)
            + tvecs[self.view_idx]
        )
        if (p_cam[:, 2] <= 0).any():
            raise BehindCamera("trial pose places corners at non-positive depth")
        return p_cam, dr

    def residuals(self, params: np.ndarray) -> np.ndarray:
        fx, fy, cx, cy, k1, k2, k3, p1, p2 = params[:9]
        p_cam, _ = self._project(params)
        z = p_cam[:, 2]
        x = p_cam[:, 0] / z
        y = p_cam[:, 1] / z
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        res = np.empty(2 * self.n_points)
        res[0::2] = fx * xd + cx - self.obs[:, 0]
        res[1::2] = fy * yd + cy - self.obs[:, 1]
        return res

    def assemble(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        fx, fy, cx, cy, k1, k2, k3, p1, p2 = params[:9]
        p_cam, dr = self._project(params, with_derivatives=True)
        z = p_cam[:, 2]
        x = p_cam[:, 0] / z
        y = p_cam[:, 1] / z
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y

        n = self.n_points
        res = np.empty(2 * n)
        res[0::2] = fx * xd + cx - self.obs[:, 0]
        res[1::2] = fy * yd + cy - self.obs[:, 1]

        jac = np.zeros((2 * n, 9 + 6 * self.n_views))
        jac[0::2, 0] = xd
        jac[1::2, 1] = yd
        jac[0::2, 2] = 1.0
        jac[1::2, 3] = 1.0
        for col, rpow in ((4, r2), (5, r2**2), (6, r2**3)):
            jac[0::2, col] = fx * x * rpow
            jac[1::2, col] = fy * y * rpow
        jac[0::2, 7] = fx * 2.0 * x * y
        jac[1::2, 7] = fy * (r2 + 2.0 * y * y)
        jac[0::2, 8] = fx * (r2 + 2.0 * x * x)
        jac[1::2, 8] = fy * 2.0 * x * y

        c = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2)
        dxd_dx = radial + 2.0 * x * x * c + 2.0 * p1 * y + 6.0 * p2 * x
        dxd_dy = 2.0 * x * y * c + 2.0 * p1 * x + 2.0 * p2 * y
        dyd_dy = radial + 2.0 * y * y * c + 6.0 * p1 * y + 2.0 * p2 * x

        dp_rot = np.einsum("nqij,nj->nqi", dr[self.view_idx], self.model)
        dx_dq = np.empty((n, 6))
        dy_dq = np.empty((n, 6))
        inv_z = 1.0 / z
        dx_dq[:, :3] = (dp_rot[:, :, 0] - x[:, None] * dp_rot[:, :, 2]) * inv_z[:, None]
        dy_dq[:, :3] = (dp_rot[:, :, 1] - y[:, None] * dp_rot[:, :, 2]) * inv_z[:, None]
        dx_dq[:, 3] = inv_z
        dx_dq[:, 4] = 0.0
        dx_dq[:, 5] = -x * inv_z
        dy_dq[:, 3] = 0.0
        dy_dq[:, 4] = inv_z
        dy_dq[:, 5] = -y * inv_z

        d_pose = np.empty((2 * n, 6))
        d_pose[0::2] = fx * (dxd_dx[:, None] * dx_dq + dxd_dy[:, None] * dy_dq)
        d_pose[1::2] = fy * (dxd_dy[:, None] * dx_dq + dyd_dy[:, None] * dy_dq)
        jac[self.rows, self.pose_cols] = d_pose
        return res, jac


def residual_jacobian(views, intrinsics: CameraIntrinsics, poses) -> scipy.sparse.csr_matrix:
    """Analytic Jacobian of all residuals w.r.t. [intrinsics | poses].

    Column layout: the 9 intrinsics in vector order, then 6 parameters
    (rotation, translation) per view. Cross-view pose blocks are
    structurally zero, so the matrix is returned sparse.
    """
    return scipy.sparse.csr_matrix(_dense_jacobian(list(views), intrinsics, list(poses)))


def mre(views, intrinsics: CameraIntrinsics, poses) -> float:
    """Mean Euclidean pixel reprojection error over all corners of all views."""
    total = 0.0
    count = 0
    for view, pose in zip(views, poses):
        res = _view_residuals(view, intrinsics, pose)
        total += float(np.sqrt(res[0::2] ** 2 + res[1::2] ** 2).sum())
        count += len(view.corners)
    return total / count


def param_error(estimate: CameraIntrinsics, reference: CameraIntrinsics) -> float:
    """Euclidean norm of the 9-vector parameter difference."""
    return float(np.linalg.norm(estimate.to_vector() - reference.to_vector()))


# ---------------------------------------------------------------------------
# Joint refinement
# ---------------------------------------------------------------------------

def _pack(intrinsics: CameraIntrinsics, poses) -> np.ndarray:
    parts = [intrinsics.to_vector()]
    for p in poses:
        parts.append(p.rvec)
        parts.append(p.tvec)
    return np.concatenate(parts)


def _unpack(params: np.ndarray, n_views: int) -> tuple[CameraIntrinsics, list[Pose]]:
    intr = CameraIntrinsics.from_vector(params[:9])
    poses = []
    for k in range(n_views):
        base = 9 + 6 * k
        poses.append(Pose(tuple(params[base : base + 3]), tuple(params[base + 3 : base + 6])))
    return intr, poses


def _free_columns(config: SolverConfig, n_views: int) -> np.ndarray:
    free = np.ones(9 + 6 * n_views, dtype=bool)
    if config.fix_k3:
        free[6] = False
    if config.fix_tangential:
        free[7] = False
        free[8] = False
    return free


def _try_cost(batch: "_Batch", params: np.ndarray) -> float:
    """Total squared residual, or +inf for an infeasible iterate."""
    if params[0] <= 0 or params[1] <= 0:
        return math.inf
    try:
        r = batch.residuals(params)
    except BehindCamera:
        return math.inf
    return float(r @ r)


def refine(views, init: CameraIntrinsics, init_poses, config: SolverConfig = SolverConfig()) -> CalibrationResult:
    """Jointly refine intrinsics and per-view poses by damped least squares.

    Damping follows a multiplicative schedule (x10 on a rejected step,
    /10 on acceptance); accepted steps never increase the cost. Returns
    converged=False with the best iterate when the iteration budget runs
    out. Raises SingularNormalEquations when damping growth cannot make
    the normal equations solvable.
    """
    views = list(views)
    poses = list(init_poses)
    if len(views) != len(poses):
        raise ValueError("views and init_poses must have equal length")
    n_views = len(views)

    batch = _Batch(views)
    params = _pack(init, poses)
    free = _free_columns(config, n_views)
    identity = np.eye(int(free.sum()))
    lam = config.damping_init
    cost = _try_cost(batch, params)
    if not math.isfinite(cost):
        raise BehindCamera("initial poses place a board behind the camera")
    cost_trace = [cost]
    converged = False
    reason = "max_iterations"
    iterations = 0

    for _ in range(config.max_iterations):
        res, jac = batch.assemble(params)
        jac = jac[:, free]
        grad = jac.T @ res
        if np.abs(grad).max() < GRAD_TOLERANCE:
            converged = True
            reason = "gradient"
            break
        jtj = jac.T @ jac

        accepted = False
        any_solvable = False
        while lam <= DAMPING_MAX:
            try:
                step = np.linalg.solve(jtj + lam * identity, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.isfinite(step).all():
                lam *= 10.0
                continue
            any_solvable = True
            trial = params.copy()
            trial[free] += step
            trial_cost = _try_cost(batch, trial)
            if trial_cost <= cost:
                params = trial
                decrease = cost - trial_cost
                rel = decrease / cost if cost > 0 else 0.0
                cost = trial_cost
                cost_trace.append(cost)
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                iterations += 1
                if rel < config.cost_rel_tolerance:
                    converged = True
                    reason = "cost"
                break
            lam *= 10.0
        if not accepted:
            if not any_solvable:
                raise SingularNormalEquations("normal equations unsolvable at maximum damping")
            # Solvable but no step improves the cost: numerically at a minimum.
            converged = True
            reason = "stalled"
            break
        if converged:
            break

    intr, final_poses = _unpack(params, n_views)
    return CalibrationResult(
        intrinsics=intr,
        per_view_poses=tuple(final_poses),
        mre=mre(views, intr, final_poses),
        converged=converged,
        iterations=iterations,
        diagnostics={
            "final_cost": cost,
            "cost_trace": cost_trace,
            "damping": lam,
            "stop_reason": reason,
        },
    )


def calibrate_views(views, config: SolverConfig = SolverConfig()) -> CalibrationResult:
    """Full pipeline: homographies, closed-form init, pose init, refinement."""
    views = list(views)
    homographies = [estimate_homography(v) for v in views]
    init = closed_form_intrinsics(homographies)
    init_poses = [pose_from_homography(h, init) for h in homographies]
    return refine(views, init, init_poses, config)
