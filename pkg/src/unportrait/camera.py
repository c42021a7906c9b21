"""Pinhole camera geometry and camera-distance bookkeeping.

Camera space is right-handed with x to the right, y down and z forward, so a
point with positive depth projects into the image with ``v`` growing
downwards. Focal lengths are 35mm-equivalent: the horizontal field of view is
fixed by the focal length over a 36mm-wide reference sensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SENSOR_WIDTH_MM = 36.0
CANONICAL_DISTANCE_CM = 160.0
CANONICAL_FOCAL_MM = 128.4
FRAMING_SCALE = CANONICAL_FOCAL_MM / CANONICAL_DISTANCE_CM  # mm per cm, 0.8025

QUERY_MIN_CM = 17.4
QUERY_MAX_CM = 130.0
QUERY_LOG2_SIGMA = 0.5

# left edges of the eight distance intervals, in cm; the last one is open
LABEL_EDGES_CM = (23.0, 26.0, 30.0, 35.0, 43.0, 62.0, 105.0, 168.0)
NUM_LABELS = len(LABEL_EDGES_CM)


class CameraError(ValueError):
    """Raised for geometrically invalid camera inputs."""


@dataclass(frozen=True)
class CameraConfig:
    focal_mm_35eq: float
    image_size_px: tuple[int, int] = (512, 512)
    principal_point_px: tuple[float, float] | None = None
    sensor_width_mm: float = SENSOR_WIDTH_MM

    def __post_init__(self):
        if not self.focal_mm_35eq > 0:
            raise CameraError(f"focal length must be positive, got {self.focal_mm_35eq}")
        w, h = self.image_size_px
        if int(w) != w or int(h) != h or w < 8 or h < 8:
            raise CameraError(f"image size must be integers >= 8, got {self.image_size_px}")
        if self.principal_point_px is None:
            object.__setattr__(self, "principal_point_px", (w / 2.0, h / 2.0))
        cx, cy = self.principal_point_px
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise CameraError(f"principal point {self.principal_point_px} outside image")

    @property
    def width(self) -> int:
        return int(self.image_size_px[0])

    @property
    def height(self) -> int:
        return int(self.image_size_px[1])

    @property
    def pixels_per_unit(self) -> float:
        """Pixel offset per unit of x/z, i.e. the focal length in pixels."""
        return self.focal_mm_35eq / self.sensor_width_mm * self.width

    def with_focal(self, focal_mm: float) -> "CameraConfig":
        return CameraConfig(focal_mm, self.image_size_px, self.principal_point_px, self.sensor_width_mm)

    @classmethod
    def for_distance(cls, distance_cm: float, size: int | tuple[int, int] = 512) -> "CameraConfig":
        """Camera whose focal length keeps framing constant at ``distance_cm``."""
        if isinstance(size, int):
            size = (size, size)
        return cls(focal_for_distance(distance_cm), size)


@dataclass(frozen=True)
class ShotParams:
    distance_cm: float
    pose_deg: tuple[float, float, float] = (0.0, 0.0, 0.0)
    focal_mm_35eq: float | None = None

    def __post_init__(self):
        if not self.distance_cm > 0:
            raise CameraError(f"distance must be positive, got {self.distance_cm}")
        if self.focal_mm_35eq is None:
            object.__setattr__(self, "focal_mm_35eq", focal_for_distance(self.distance_cm))
        object.__setattr__(self, "pose_deg", tuple(float(a) for a in self.pose_deg))

    @property
    def is_framed(self) -> bool:
        return math.isclose(self.focal_mm_35eq, focal_for_distance(self.distance_cm), rel_tol=1e-12)


@dataclass(frozen=True)
class DistanceLabel:
    index: int
    clamped: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.index < NUM_LABELS:
            raise CameraError(f"label index out of range: {self.index}")

    @property
    def interval_cm(self) -> tuple[float, float]:
        lo = LABEL_EDGES_CM[self.index]
        hi = LABEL_EDGES_CM[self.index + 1] if self.index + 1 < NUM_LABELS else math.inf
        return lo, hi

    def __int__(self) -> int:
        return self.index


def project(points, cam: CameraConfig) -> np.ndarray:
    """Project camera-space points (cm) to pixel coordinates.

    Accepts a single ``(3,)`` point or an ``(N, 3)`` array and returns ``(2,)``
    or ``(N, 2)`` accordingly.
    """
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    z = p[:, 2]
    if np.any(z <= 0):
        raise CameraError("point behind camera (z <= 0)")
    k = cam.pixels_per_unit
    cx, cy = cam.principal_point_px
    uv = np.stack([cx + k * p[:, 0] / z, cy + k * p[:, 1] / z], axis=1)
    return uv[0] if single else uv


def focal_for_distance(distance_cm: float) -> float:
    if not distance_cm > 0:
        raise CameraError(f"distance must be positive, got {distance_cm}")
    return distance_cm * CANONICAL_FOCAL_MM / CANONICAL_DISTANCE_CM


def distance_for_focal(focal_mm: float) -> float:
    if not focal_mm > 0:
        raise CameraError(f"focal length must be positive, got {focal_mm}")
    return focal_mm * CANONICAL_DISTANCE_CM / CANONICAL_FOCAL_MM


def bin_label(distance_cm: float) -> DistanceLabel:
    """Distance interval label; distances under 23cm clamp to label 0."""
    if not distance_cm > 0:
        raise CameraError(f"distance must be positive, got {distance_cm}")
    if distance_cm < LABEL_EDGES_CM[0]:
        return DistanceLabel(0, clamped=True)
    index = int(np.searchsorted(LABEL_EDGES_CM, distance_cm, side="right")) - 1
    return DistanceLabel(index)


def sample_query_logdistance(true_distance_cm: float, rng: np.random.Generator,
                             size=None, sigma: float = QUERY_LOG2_SIGMA):
    """Draw probe query distances around the true one, normally in log2 space."""
    if not true_distance_cm > 0:
        raise CameraError(f"distance must be positive, got {true_distance_cm}")
    g = rng.normal(math.log2(true_distance_cm), sigma, size=size)
    return np.clip(np.exp2(g), QUERY_MIN_CM, QUERY_MAX_CM)


def rotation_matrix(pose_deg) -> np.ndarray:
    """Rotation for (pitch, yaw, roll) in degrees, applied as roll @ yaw @ pitch.

    Pitch turns about x, yaw about y and roll about z of the head frame.
    """
    pitch, yaw, roll = np.radians(np.asarray(pose_deg, dtype=np.float64))
    cx, sx = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    cz, sz = math.cos(roll), math.sin(roll)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


# head frame: x to the image right, y up, z towards the camera
HEAD_TO_CAMERA = np.diag([1.0, -1.0, -1.0])


def head_to_camera(points, shot: ShotParams) -> np.ndarray:
    """Place head-frame points in camera space for ``shot``.

    The head origin sits on the optical axis at ``shot.distance_cm``.
    """
    r = HEAD_TO_CAMERA @ rotation_matrix(shot.pose_deg)
    p = np.asarray(points, dtype=np.float64) @ r.T
    p[..., 2] += shot.distance_cm
    return p

