"""Ready-made camera, board, and search-space configurations.

The lens presets model two common automotive-style cameras by field of
view and resolution; their distortion coefficients are simulation
defaults chosen to be representative, not measured values.
"""

from __future__ import annotations

import math

from .geometry import BoardSpec, CameraIntrinsics, ImageSpec
from .poseselect import PoseSearchSpace
from .simulate import VirtualCamera


def default_board() -> BoardSpec:
    """9x6 interior corners, 25 mm squares."""
    return BoardSpec(cols=9, rows=6, square_size=0.025)


def _camera_from_fov(
    width: int, height: int, hfov_deg: float, vfov_deg: float, **distortion
) -> VirtualCamera:
    fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0, **distortion)
    return VirtualCamera(truth=intr, image=ImageSpec(width, height))


LENS_PRESETS = {
    # 80x60 degree IR driver-camera style lens.
    "len1": dict(width=1280, height=800, hfov_deg=80.0, vfov_deg=60.0,
                 k1=-0.25, k2=0.06, p1=0.0008, p2=-0.0005),
    # 120x100 degree wide RGB lens.
    "len2": dict(width=1920, height=1208, hfov_deg=120.0, vfov_deg=100.0,
                 k1=-0.32, k2=0.10, p1=0.0005, p2=-0.0003),
}


def lens_preset(name: str) -> VirtualCamera:
    try:
        spec = LENS_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown lens preset {name!r}; known: {sorted(LENS_PRESETS)}")
    return _camera_from_fov(**spec)


def dms_space(image: ImageSpec | None = None, board: BoardSpec | None = None) -> PoseSearchSpace:
    """Driver-monitoring working volume: board held 0.3 to 2 meters out."""
    image = image or ImageSpec(1280, 800)
    board = board or default_board()
    return PoseSearchSpace(
        distance_range=(0.3, 2.0),
        lateral_range=(-0.45, 0.25),
        angle_range=((-0.6, 0.6), (-0.6, 0.6), (-0.8, 0.8)),
        image=image,
        board=board,
    )


def near_space(image: ImageSpec | None = None, board: BoardSpec | None = None) -> PoseSearchSpace:
    """Tighter volume where the whole board stays comfortably in frame."""
    image = image or ImageSpec(1280, 800)
    board = board or default_board()
    return PoseSearchSpace(
        distance_range=(0.45, 1.0),
        lateral_range=(-0.22, 0.02),
        angle_range=((-0.45, 0.45), (-0.45, 0.45), (-0.7, 0.7)),
        image=image,
        board=board,
    )
