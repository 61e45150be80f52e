"""Procedural articulated scenes and their ground-truth multi-view renders."""

from .cameras import Camera, CameraConfigError, generate_dome_cameras
from .dataset import (
    DatasetFormatError,
    StateDataset,
    StateRecord,
    View,
    generate_dataset,
    read_dataset,
    read_depth,
    write_dataset,
    write_depth,
)
from .raytrace import render_gt, sample_surface_points
from .scene import (
    PRESETS,
    ArticulatedScene,
    Box,
    MovablePart,
    RigidTransform,
    SceneError,
    make_preset,
    pose_part,
    preset_schedule,
)

__all__ = [
    "ArticulatedScene",
    "Box",
    "Camera",
    "CameraConfigError",
    "DatasetFormatError",
    "MovablePart",
    "PRESETS",
    "RigidTransform",
    "SceneError",
    "StateDataset",
    "StateRecord",
    "View",
    "generate_dataset",
    "generate_dome_cameras",
    "make_preset",
    "pose_part",
    "preset_schedule",
    "read_dataset",
    "read_depth",
    "render_gt",
    "sample_surface_points",
    "write_dataset",
    "write_depth",
]
