"""Pinhole cameras and the dome rig."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class CameraConfigError(ValueError):
    pass


@dataclass
class Camera:
    position: np.ndarray
    target: np.ndarray
    up: np.ndarray
    fov: float
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if np.allclose(self.position, self.target):
            raise CameraConfigError("camera position coincides with its target")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (right, up, forward) frame."""
        fwd = self.target - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        n = np.linalg.norm(right)
        if n < 1e-9:
            raise CameraConfigError("up hint is parallel to the viewing direction")
        right = right / n
        up = np.cross(right, fwd)
        return right, up, fwd

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel (origins, unit directions), row-major with row 0 at the top."""
        right, up, fwd = self.basis()
        tan = math.tan(0.5 * self.fov)
        aspect = self.width / self.height
        xs = ((np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0) * tan * aspect
        ys = (1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0) * tan
        gx, gy = np.meshgrid(xs, ys)
        dirs = fwd + gx[..., None] * right + gy[..., None] * up
        dirs = dirs.reshape(-1, 3)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(self.position, dirs.shape).copy()
        return origins, dirs

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "target": self.target.tolist(),
            "up": self.up.tolist(),
            "fov": self.fov,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["position"], d["target"], d["up"], float(d["fov"]), int(d["width"]), int(d["height"]))


def generate_dome_cameras(
    count: int,
    radius: float,
    seed: int,
    *,
    scene_radius: float = 0.0,
    fov: float = math.radians(40.0),
    width: int = 64,
    height: int = 64,
    target=(0.0, 0.0, 0.0),
) -> list[Camera]:
    """Cameras on the upper hemisphere, stratified in cos-elevation with a golden-angle azimuth.

    A single camera sits at the zenith.
    """
    if count < 1:
        raise CameraConfigError("camera count must be at least 1")
    if radius <= scene_radius:
        raise CameraConfigError(f"dome radius {radius} lies inside the scene bounds ({scene_radius})")
    target = np.asarray(target, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if count == 1:
        zs = np.array([1.0])
        phis = np.array([0.0])
    else:
        jitter = rng.uniform(0.0, 1.0, size=count)
        zs = 1.0 - (np.arange(count) + jitter) / count
        phis = rng.uniform(0.0, 2.0 * math.pi) + GOLDEN_ANGLE * np.arange(count)
    cams = []
    for z, phi in zip(zs, phis):
        rxy = math.sqrt(max(0.0, 1.0 - z * z))
        pos = target + radius * np.array([rxy * math.cos(phi), rxy * math.sin(phi), z])
        up = np.array([0.0, 0.0, 1.0]) if rxy > 1e-6 else np.array([0.0, 1.0, 0.0])
        cams.append(Camera(pos, target, up, fov, width, height))
    return cams
