"""Figure rendering for experiment reports and selected pose sets.

All figures are written headlessly through the Agg backend and carry no
timestamps or environment-dependent metadata, so repeated runs with the
same inputs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiment import ExperimentReport
from .geometry import BoardSpec, CameraIntrinsics, ImageSpec, project_board
from .poseselect import PoseSet

_SAVEFIG = dict(dpi=110, metadata={"Software": None})


def _perimeter_indices(board: BoardSpec) -> list[int]:
    cols, rows = board.cols, board.rows
    top = list(range(cols))
    right = [r * cols + (cols - 1) for r in range(1, rows)]
    bottom = [(rows - 1) * cols + c for c in range(cols - 2, -1, -1)]
    left = [r * cols for r in range(rows - 2, 0, -1)]
    return top + right + bottom + left


def save_extremal_rows_figure(report: ExperimentReport, path) -> Path:
    """Bar chart of MRE, score, and parameter error per extremal row."""
    path = Path(path)
    labels = [row.label for row in report.rows]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    for ax, field, title in zip(
        axes,
        ("mre", "score", "param_err"),
        ("mean reprojection error [px]", "score", "parameter error"),
    ):
        values = [getattr(row, field) for row in report.rows]
        ax.bar(range(len(labels)), values, color="#4878a8")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
        ax.set_title(title, fontsize=9)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
    return path


def save_pose_coverage_figure(
    pose_set: PoseSet,
    board: BoardSpec,
    camera: CameraIntrinsics,
    image: ImageSpec,
    path,
    title: str = "projected board outlines",
) -> Path:
    """Projected board outline of every pose over the image rectangle."""
    path = Path(path)
    perimeter = _perimeter_indices(board)
    fig, ax = plt.subplots(figsize=(6.4, 6.4 * image.height / image.width))
    cmap = plt.get_cmap("viridis")
    for k, pose in enumerate(pose_set.poses):
        pixels, visible = project_board(board, pose, camera, image)
        if not visible.any():
            continue
        outline = pixels[perimeter + perimeter[:1]]
        color = cmap(k / max(1, len(pose_set.poses) - 1))
        ax.plot(outline[:, 0], outline[:, 1], color=color, lw=1.0, alpha=0.8)
    ax.add_patch(
        plt.Rectangle((0, 0), image.width, image.height, fill=False, color="black", lw=1.2)
    )
    ax.axhline(image.height / 2, color="gray", lw=0.5, ls="--")
    ax.axvline(image.width / 2, color="gray", lw=0.5, ls="--")
    ax.set_xlim(-0.05 * image.width, 1.05 * image.width)
    ax.set_ylim(1.05 * image.height, -0.05 * image.height)  # image y grows down
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
    return path


def render_experiment_figures(report: ExperimentReport, out_dir) -> list[Path]:
    """The simulate report's figures: extremal-row bars plus coverage of
    the best and worst scoring sets."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    from .poseselect import PoseSearchSpace

    space = PoseSearchSpace.from_json_dict(report.config["space"])
    camera = CameraIntrinsics.from_json_dict(report.config["camera"]["intrinsics"])
    paths = [save_extremal_rows_figure(report, out_dir / "extremal_rows.png")]
    for label in ("max_score", "min_score"):
        row = report.row(label)
        paths.append(
            save_pose_coverage_figure(
                row.pose_set, space.board, camera, space.image,
                out_dir / f"coverage_{label}.png",
                title=f"board outlines, {label} set",
            )
        )
    return paths
