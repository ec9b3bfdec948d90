"""Procedural articulated objects and their point-map renderer."""
from .objects import CATEGORIES, K_MAX, ArticulatedObject, Box, MovablePart, generate_object
from .pmap import PmapFormatError, decode_pmap, encode_pmap, read_pmap, write_pmap
from .render import (
    Camera,
    CameraError,
    NoiseConfig,
    PointMap,
    depth_edges,
    intersect_boxes,
    render_pointmap,
    render_state_pair,
    suggest_camera,
    tracked_correspondences,
)

__all__ = [
    "CATEGORIES", "K_MAX", "ArticulatedObject", "Box", "MovablePart", "generate_object",
    "PmapFormatError", "decode_pmap", "encode_pmap", "read_pmap", "write_pmap",
    "Camera", "CameraError", "NoiseConfig", "PointMap", "depth_edges", "intersect_boxes",
    "render_pointmap", "render_state_pair", "suggest_camera", "tracked_correspondences",
]
