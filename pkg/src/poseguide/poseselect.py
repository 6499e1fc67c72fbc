"""Candidate pose-set generation, degeneracy screening, scoring, selection.

A pose search space bounds where the board may sit in front of the
camera. Candidate sets are drawn from a uniformly sampled pool, screened
for degenerate geometry (duplicate poses, all-parallel boards, image
coverage gaps), and ranked by the reciprocal of the weighted sum of mean
reprojection error and parameter estimation error against a reference
camera. The highest-scoring set wins.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.spatial

from .calibrate import calibrate_views, param_error
from .errors import (
    AllDegenerate,
    DegenerateConfiguration,
    SingularNormalEquations,
    SpaceTooRestrictive,
)
from .geometry import (
    BoardSpec,
    CameraIntrinsics,
    ImageSpec,
    Pose,
    project_board,
    rotation_geodesic,
)
from .simulate import NoiseModel, VirtualCamera, derive_seed, render_observations

# Distinct, ordering-preserving per-candidate seeds derived from one base.
CANDIDATE_SEED_STRIDE = 1_000_003

# Strict tolerance of the PoseSet "no identical poses" invariant.
IDENTICAL_POSE_TOL = 1e-6

FLAG_DUPLICATE = "duplicate_poses"
FLAG_PARALLEL = "parallel_boards"
FLAG_COVERAGE = "coverage_gap"
FLAG_CALIBRATION = "calibration_degenerate"

# Grid used to rasterize projected-corner hulls for coverage checks.
_COVERAGE_GRID = (80, 50)


@dataclass(frozen=True)
class PoseSearchSpace:
    """Application-specific region of admissible board poses.

    distance_range bounds the translation along the optical axis,
    lateral_range bounds X and Y, and angle_range holds per-axis
    (min, max) rotation limits in radians.
    """

    distance_range: tuple[float, float]
    lateral_range: tuple[float, float]
    angle_range: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    image: ImageSpec
    board: BoardSpec

    def __post_init__(self):
        ranges = [self.distance_range, self.lateral_range, *self.angle_range]
        for lo, hi in ranges:
            if not lo < hi:
                raise ValueError(f"range ({lo}, {hi}) must satisfy min < max")

    def space_id(self) -> str:
        digest = hashlib.sha256(
            json.dumps(self.to_json_dict(), sort_keys=True).encode()
        ).hexdigest()
        return digest[:12]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "distance_range": list(self.distance_range),
            "lateral_range": list(self.lateral_range),
            "angle_range": [list(r) for r in self.angle_range],
            "image": self.image.to_json_dict(),
            "board": self.board.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PoseSearchSpace":
        return cls(
            distance_range=tuple(data["distance_range"]),
            lateral_range=tuple(data["lateral_range"]),
            angle_range=tuple(tuple(r) for r in data["angle_range"]),
            image=ImageSpec.from_json_dict(data["image"]),
            board=BoardSpec.from_json_dict(data["board"]),
        )


@dataclass(frozen=True)
class PoseSet:
    """N board poses plus the provenance of how they were sampled."""

    poses: tuple[Pose, ...]
    seed: int
    space_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) < 3:
            raise ValueError("a pose set needs at least 3 poses for calibration")
        for i, a in enumerate(self.poses):
            for b in self.poses[i + 1 :]:
                if (
                    rotation_geodesic(a, b) < IDENTICAL_POSE_TOL
                    and np.linalg.norm(a.tvec - b.tvec) < IDENTICAL_POSE_TOL
                ):
                    raise ValueError("pose set contains identical poses")

    def __len__(self) -> int:
        return len(self.poses)

    def replace_pose(self, index: int, pose: Pose) -> "PoseSet":
        poses = list(self.poses)
        poses[index] = pose
        return PoseSet(tuple(poses), self.seed, self.space_id)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "poses": [p.to_json_dict() for p in self.poses],
            "seed": self.seed,
            "space_id": self.space_id,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PoseSet":
        return cls(
            poses=tuple(Pose.from_json_dict(p) for p in data["poses"]),
            seed=int(data["seed"]),
            space_id=data.get("space_id", ""),
        )


@dataclass(frozen=True)
class ScoreReport:
    """Outcome of evaluating one candidate set.

    score is 1 / (alpha * mre + beta * param_err) for clean sets and 0
    whenever any degeneracy flag is raised; flagged sets may carry None
    for mre/param_err when calibration never ran.
    """

    score: float
    mre: float | None
    param_err: float | None
    alpha: float
    beta: float
    degenerate_flags: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "score": self.score,
            "mre": self.mre,
            "param_err": self.param_err,
            "alpha": self.alpha,
            "beta": self.beta,
            "degenerate_flags": list(self.degenerate_flags),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "ScoreReport":
        return cls(
            score=data["score"],
            mre=data["mre"],
            param_err=data["param_err"],
            alpha=data["alpha"],
            beta=data["beta"],
            degenerate_flags=tuple(data.get("degenerate_flags", ())),
        )


@dataclass(frozen=True)
class DegeneracyThresholds:
    """Engineering thresholds behind the degeneracy filters.

    near_duplicate is deliberately looser than the PoseSet construction
    invariant (1e-6): sets of practically identical poses must remain
    constructible so the filter can flag them.
    """

    near_duplicate_rotation: float = 1e-4
    near_duplicate_translation: float = 1e-4
    parallel_max_geodesic: float = 0.1
    quadrant_min_coverage: float = 0.05


DEFAULT_THRESHOLDS = DegeneracyThresholds()


def pose_score(mre_value: float, param_err_value: float, alpha: float = 1.0, beta: float = 1.0) -> float:
    """Reciprocal of the weighted sum of reprojection and parameter error."""
    denom = alpha * mre_value + beta * param_err_value
    return math.inf if denom == 0 else 1.0 / denom


def outer_corners_on_screen(
    pose: Pose, board: BoardSpec, camera: CameraIntrinsics, image: ImageSpec
) -> bool:
    """True when the four outermost corners project inside the image.

    A guidance target is only matchable if all four are on screen, since
    the match criterion averages exactly those corners.
    """
    _, visible = project_board(board, pose, camera, image)
    return bool(visible[list(board.outer_corner_indices())].all())


def sample_space(
    space: PoseSearchSpace,
    m: int,
    seed: int,
    camera: CameraIntrinsics,
    visibility: str = "any4",
) -> list[Pose]:
    """Draw m poses uniformly from the space, each keeping >= 4 corners visible.

    Every translation and rotation component is an independent uniform
    draw within its range; candidates failing the visibility requirement
    under the reference camera are rejected and redrawn. Raises
    SpaceTooRestrictive after 100 * m failed attempts.

    visibility="outer4" additionally requires the four outermost corners
    on screen, which guidance-bound sets need (off-screen outer corners
    make a target unmatchable).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if visibility not in ("any4", "outer4"):
        raise ValueError("visibility must be 'any4' or 'outer4'")
    rng = np.random.default_rng(seed)
    poses: list[Pose] = []
    attempts = 0
    while len(poses) < m:
        if attempts >= 100 * m:
            raise SpaceTooRestrictive(
                f"found {len(poses)} of {m} admissible poses in {attempts} attempts"
            )
        attempts += 1
        rot = tuple(rng.uniform(lo, hi) for lo, hi in space.angle_range)
        tx = rng.uniform(*space.lateral_range)
        ty = rng.uniform(*space.lateral_range)
        tz = rng.uniform(*space.distance_range)
        pose = Pose(rot, (tx, ty, tz))
        _, visible = project_board(space.board, pose, camera, space.image)
        if visible.sum() < 4:
            continue
        if visibility == "outer4" and not visible[
            list(space.board.outer_corner_indices())
        ].all():
            continue
        poses.append(pose)
    return poses


def draw_candidate_sets(pool, n: int, k_sets: int, seed: int, space_id: str = "") -> list[PoseSet]:
    """Draw k_sets candidate sets of n distinct pool members each.

    Candidate i gets its own derived seed (monotone in i) so downstream
    noise streams and tie-breaks are independent of shared sampler state.
    """
    pool = list(pool)
    if len(pool) < n:
        raise ValueError(f"pool of {len(pool)} cannot supply sets of {n}")
    rng = np.random.default_rng(seed)
    sets = []
    for i in range(k_sets):
        indices = rng.choice(len(pool), size=n, replace=False)
        sets.append(
            PoseSet(
                poses=tuple(pool[j] for j in indices),
                seed=seed * CANDIDATE_SEED_STRIDE + i,
                space_id=space_id,
            )
        )
    return sets


# ---------------------------------------------------------------------------
# Degeneracy filters
# ---------------------------------------------------------------------------

def _hull_mask(points: np.ndarray, grid_u: np.ndarray, grid_v: np.ndarray) -> np.ndarray:
    """Boolean mask of grid cells inside the convex hull of the points."""
    mask = np.zeros(grid_u.shape, dtype=bool)
    if len(points) < 3:
        return mask
    try:
        hull = scipy.spatial.ConvexHull(points)
    except scipy.spatial.QhullError:
        return mask
    verts = points[hull.vertices]  # counter-clockwise
    # Only cells inside the hull's bounding box can be inside the hull.
    us = grid_u[0]
    vs = grid_v[:, 0]
    u_sel = (us >= verts[:, 0].min()) & (us <= verts[:, 0].max())
    v_sel = (vs >= verts[:, 1].min()) & (vs <= verts[:, 1].max())
    if not u_sel.any() or not v_sel.any():
        return mask
    sub_u = grid_u[np.ix_(v_sel, u_sel)]
    sub_v = grid_v[np.ix_(v_sel, u_sel)]
    inside = np.ones(sub_u.shape, dtype=bool)
    edges = np.roll(verts, -1, axis=0) - verts
    for (au, av), (eu, ev) in zip(verts, edges):
        inside &= eu * (sub_v - av) - ev * (sub_u - au) >= 0.0
    mask[np.ix_(v_sel, u_sel)] = inside
    return mask


def quadrant_coverage(
    pose_set: PoseSet, space: PoseSearchSpace, camera: CameraIntrinsics
) -> np.ndarray:
    """Fraction of each image quadrant covered by projected corner hulls.

    Quadrant order: top-left, top-right, bottom-left, bottom-right.
    """
    nu, nv = _COVERAGE_GRID
    us = (np.arange(nu) + 0.5) * space.image.width / nu
    vs = (np.arange(nv) + 0.5) * space.image.height / nv
    grid_u, grid_v = np.meshgrid(us, vs)
    covered = np.zeros(grid_u.shape, dtype=bool)
    for pose in pose_set.poses:
        pixels, visible = project_board(space.board, pose, camera, space.image)
        covered |= _hull_mask(pixels[visible], grid_u, grid_v)
    half_u = grid_u >= space.image.width / 2
    half_v = grid_v >= space.image.height / 2
    out = np.empty(4)
    for q, (right, bottom) in enumerate([(False, False), (True, False), (False, True), (True, True)]):
        cell = (half_u == right) & (half_v == bottom)
        out[q] = covered[cell].mean()
    return out


def degeneracy_filters(
    pose_set: PoseSet,
    space: PoseSearchSpace,
    camera: CameraIntrinsics,
    thresholds: DegeneracyThresholds = DEFAULT_THRESHOLDS,
) -> list[str]:
    """Evaluate all degeneracy checks; return every triggered flag name.

    (a) duplicate_poses: some pair is a near-duplicate in both rotation
        and translation.
    (b) parallel_boards: every pair of boards has (near-)equal rotation,
        so depth alone varies and focal length is ambiguous.
    (c) coverage_gap: the union of projected corner hulls leaves some
        image quadrant with less than the minimum covered fraction.
    """
    flags = []
    poses = pose_set.poses
    duplicate = False
    max_geodesic = 0.0
    for i, a in enumerate(poses):
        for b in poses[i + 1 :]:
            geo = rotation_geodesic(a, b)
            max_geodesic = max(max_geodesic, geo)
            if (
                geo < thresholds.near_duplicate_rotation
                and np.linalg.norm(a.tvec - b.tvec) < thresholds.near_duplicate_translation
            ):
                duplicate = True
    if duplicate:
        flags.append(FLAG_DUPLICATE)
    if max_geodesic < thresholds.parallel_max_geodesic:
        flags.append(FLAG_PARALLEL)
    if quadrant_coverage(pose_set, space, camera).min() < thresholds.quadrant_min_coverage:
        flags.append(FLAG_COVERAGE)
    return flags


# ---------------------------------------------------------------------------
# Scoring and selection
# ---------------------------------------------------------------------------

def _score_with_details(
    pose_set: PoseSet,
    space: PoseSearchSpace,
    reference: CameraIntrinsics,
    noise: NoiseModel,
    alpha: float,
    beta: float,
    thresholds: DegeneracyThresholds,
):
    """ScoreReport plus the calibration views/result when calibration ran."""
    flags = degeneracy_filters(pose_set, space, reference, thresholds)
    if flags:
        return ScoreReport(0.0, None, None, alpha, beta, tuple(flags)), None, None
    camera = VirtualCamera(reference, space.image)
    views = render_observations(
        camera, pose_set, space.board, noise.reseeded(derive_seed(noise.seed, pose_set.seed))
    )
    try:
        result = calibrate_views(views)
    except (DegenerateConfiguration, SingularNormalEquations):
        return ScoreReport(0.0, None, None, alpha, beta, (FLAG_CALIBRATION,)), None, None
    err = param_error(result.intrinsics, reference)
    report = ScoreReport(
        score=pose_score(result.mre, err, alpha, beta),
        mre=result.mre,
        param_err=err,
        alpha=alpha,
        beta=beta,
    )
    return report, views, result


def score_pose_set(
    pose_set: PoseSet,
    space: PoseSearchSpace,
    reference: CameraIntrinsics,
    noise: NoiseModel,
    alpha: float = 1.0,
    beta: float = 1.0,
    thresholds: DegeneracyThresholds = DEFAULT_THRESHOLDS,
) -> ScoreReport:
    """Render the set synthetically, calibrate, and score the outcome.

    The noise stream is derived from (noise.seed, set.seed) so candidate
    scores never share sampler state. Degenerate sets score exactly 0;
    a calibration failure is reported as a flag, never raised.
    """
    report, _, _ = _score_with_details(pose_set, space, reference, noise, alpha, beta, thresholds)
    return report


def best_report(scored: list[tuple[PoseSet, ScoreReport]]) -> tuple[PoseSet, ScoreReport]:
    """Pick the winner: max score, ties by lower mre, then lower seed."""
    def key(pair):
        _, rep = pair
        return (-rep.score, rep.mre if rep.mre is not None else math.inf, pair[0].seed)

    return min(scored, key=key)


def select_optimal(
    candidates,
    space: PoseSearchSpace,
    reference: CameraIntrinsics,
    noise: NoiseModel,
    alpha: float = 1.0,
    beta: float = 1.0,
    thresholds: DegeneracyThresholds = DEFAULT_THRESHOLDS,
) -> tuple[PoseSet, ScoreReport]:
    """Score every candidate and return the arg-max set with its report.

    Raises AllDegenerate when every candidate is flagged.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one candidate set")
    scored = [
        (c, score_pose_set(c, space, reference, noise, alpha, beta, thresholds))
        for c in candidates
    ]
    if all(rep.degenerate_flags for _, rep in scored):
        raise AllDegenerate(f"all {len(candidates)} candidate sets are degenerate")
    return best_report(scored)


# ---------------------------------------------------------------------------
# Iterative coverage-driven refinement
# ---------------------------------------------------------------------------

def _quadrant_of(pixel, image: ImageSpec) -> int:
    right = pixel[0] >= image.width / 2
    bottom = pixel[1] >= image.height / 2
    return int(right) + 2 * int(bottom)


def _quadrant_mean_residuals(views, result, image: ImageSpec) -> np.ndarray:
    """Mean reprojection residual per image quadrant; empty quadrants are inf."""
    sums = np.zeros(4)
    counts = np.zeros(4, dtype=int)
    from .calibrate import _view_residuals  # residual layout is u, v interleaved

    for view, pose in zip(views, result.per_view_poses):
        res = _view_residuals(view, result.intrinsics, pose)
        mags = np.sqrt(res[0::2] ** 2 + res[1::2] ** 2)
        for pix, mag in zip(view.pixels, mags):
            q = _quadrant_of(pix, image)
            sums[q] += mag
            counts[q] += 1
    out = np.full(4, np.inf)
    nonzero = counts > 0
    out[nonzero] = sums[nonzero] / counts[nonzero]
    return out


def _hull_centroid_quadrant(pose: Pose, space: PoseSearchSpace, camera: CameraIntrinsics) -> int:
    pixels, visible = project_board(space.board, pose, camera, space.image)
    centroid = pixels[visible].mean(axis=0)
    return _quadrant_of(centroid, space.image)


def iterative_refine_set(
    initial: PoseSet,
    space: PoseSearchSpace,
    reference: CameraIntrinsics,
    noise: NoiseModel,
    rounds: int,
    alpha: float = 1.0,
    beta: float = 1.0,
    proposals_per_round: int = 6,
    thresholds: DegeneracyThresholds = DEFAULT_THRESHOLDS,
) -> PoseSet:
    """Iteratively swap poses into the worst-calibrated image quadrant.

    Each round calibrates the current set, finds the quadrant with the
    highest mean residual (empty quadrants count as worst), proposes
    poses whose projection centers there, and keeps the best swap only
    if it strictly improves the score. The score is therefore
    non-decreasing across rounds; zero improving swaps is a fixed point.
    """
    current = initial
    report, views, result = _score_with_details(
        current, space, reference, noise, alpha, beta, thresholds
    )
    if report.degenerate_flags:
        raise ValueError(f"initial set is degenerate: {report.degenerate_flags}")
    for round_idx in range(rounds):
        quadrant_res = _quadrant_mean_residuals(views, result, space.image)
        worst = int(np.argmax(quadrant_res))
        best_q = int(np.argmin(quadrant_res))

        # The victim: a pose concentrated in the best-covered quadrant.
        victims = [
            i
            for i, p in enumerate(current.poses)
            if _hull_centroid_quadrant(p, space, reference) == best_q
        ] or list(range(len(current.poses)))
        victim = victims[0]

        rng_seed = derive_seed(initial.seed, round_idx)
        pool = sample_space(space, 20 * proposals_per_round, rng_seed, reference)
        proposals = [
            p for p in pool if _hull_centroid_quadrant(p, space, reference) == worst
        ][:proposals_per_round]

        improved = None
        for candidate_pose in proposals:
            try:
                trial = current.replace_pose(victim, candidate_pose)
            except ValueError:
                continue
            trial_report, trial_views, trial_result = _score_with_details(
                trial, space, reference, noise, alpha, beta, thresholds
            )
            if trial_report.degenerate_flags:
                continue
            if trial_report.score > report.score and (
                improved is None or trial_report.score > improved[1].score
            ):
                improved = (trial, trial_report, trial_views, trial_result)
        if improved is None:
            continue
        current, report, views, result = improved
    return current
