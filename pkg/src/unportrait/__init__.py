"""Portrait perspective undistortion: synthetic pairs, distance estimation, flow correction."""

from .camera import (CameraConfig, DistanceLabel, ShotParams, bin_label, distance_for_focal, focal_for_distance,
                     project, sample_query_logdistance)
from .imaging import FlowMap, ImageBuffer

__all__ = [
    "CameraConfig", "DistanceLabel", "ShotParams", "FlowMap", "ImageBuffer", "bin_label",
    "distance_for_focal", "focal_for_distance", "project", "sample_query_logdistance",
]
__version__ = "0.1.0"
