"""Articulated scenes built from oriented boxes, plus the built-in presets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# face order used for per-face albedo and surface sampling
FACES = ("-x", "+x", "-y", "+y", "-z", "+z")


class SceneError(ValueError):
    pass


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    k = np.asarray(axis, dtype=np.float64)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


@dataclass
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))


@dataclass
class Box:
    center: np.ndarray
    half: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    albedo: np.ndarray = field(default_factory=lambda: np.full((6, 3), 0.7))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.half = np.asarray(self.half, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        alb = np.asarray(self.albedo, dtype=np.float64)
        self.albedo = np.broadcast_to(alb, (6, 3)).copy()

    def transformed(self, tf: RigidTransform) -> "Box":
        return Box(tf.apply(self.center), self.half, tf.rotation @ self.rotation, self.albedo)

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        return self.center + (signs * self.half) @ self.rotation.T

    def face_areas(self) -> np.ndarray:
        hx, hy, hz = 2.0 * self.half
        return np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "half": self.half.tolist(),
            "rotation": self.rotation.tolist(),
            "albedo": self.albedo.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(d["center"], d["half"], d["rotation"], d["albedo"])


@dataclass
class MovablePart:
    box: Box
    joint: str
    axis: np.ndarray
    pivot: np.ndarray
    motion_range: tuple[float, float]

    def __post_init__(self):
        if self.joint not in ("revolute", "prismatic"):
            raise SceneError(f"unknown joint type {self.joint!r}")
        self.axis = np.asarray(self.axis, dtype=np.float64)
        self.pivot = np.asarray(self.pivot, dtype=np.float64)
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise SceneError("joint axis must have unit norm")
        lo, hi = (float(v) for v in self.motion_range)
        if not lo < hi:
            raise SceneError(f"motion range must satisfy min < max, got [{lo}, {hi}]")
        self.motion_range = (lo, hi)

    def to_dict(self) -> dict:
        return {
            "box": self.box.to_dict(),
            "joint": self.joint,
            "axis": self.axis.tolist(),
            "pivot": self.pivot.tolist(),
            "range": list(self.motion_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MovablePart":
        return cls(Box.from_dict(d["box"]), d["joint"], d["axis"], d["pivot"], tuple(d["range"]))


def pose_part(part: MovablePart, q: float) -> RigidTransform:
    """Rigid transform taking the rest-pose part geometry to articulation fraction ``q``."""
    if not 0.0 <= q <= 1.0:
        raise SceneError(f"articulation fraction must lie in [0, 1], got {q}")
    lo, hi = part.motion_range
    amount = lo + (hi - lo) * q
    if part.joint == "prismatic":
        return RigidTransform(np.eye(3), amount * part.axis)
    rot = rotation_about(part.axis, amount)
    return RigidTransform(rot, part.pivot - rot @ part.pivot)


@dataclass
class ArticulatedScene:
    static: list[Box]
    parts: list[MovablePart]
    background: np.ndarray = field(default_factory=lambda: np.ones(3))
    name: str = "custom"

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    def posed_boxes(self, q) -> list[Box]:
        q = list(q)
        if len(q) != len(self.parts):
            raise SceneError(f"expected {len(self.parts)} articulation fractions, got {len(q)}")
        boxes = list(self.static)
        for part, qi in zip(self.parts, q):
            boxes.append(part.box.transformed(pose_part(part, qi)))
        return boxes

    def bounding_radius(self, samples: int = 33) -> float:
        """Radius about the origin enclosing every pose of every box."""
        r = 0.0
        for box in self.static:
            r = max(r, float(np.linalg.norm(box.corners(), axis=1).max()))
        for part in self.parts:
            for q in np.linspace(0.0, 1.0, samples):
                c = part.box.transformed(pose_part(part, float(q))).corners()
                r = max(r, float(np.linalg.norm(c, axis=1).max()))
        return r

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "background": self.background.tolist(),
            "static": [b.to_dict() for b in self.static],
            "parts": [p.to_dict() for p in self.parts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArticulatedScene":
        return cls(
            [Box.from_dict(b) for b in d["static"]],
            [MovablePart.from_dict(p) for p in d["parts"]],
            d["background"],
            d.get("name", "custom"),
        )


# ---------------------------------------------------------------------------
# presets

_FACE_TINT = np.array([0.92, 1.0, 0.85, 0.95, 0.75, 1.0])[:, None]


def _tinted(rgb) -> np.ndarray:
    return np.clip(_FACE_TINT * np.asarray(rgb, dtype=np.float64), 0.0, 1.0)


def _panel_cabinet(size, thickness, color, open_face: str) -> list[Box]:
    """Hollow box made of thin panels with one face left open."""
    sx, sy, sz = (s / 2.0 for s in size)
    t = thickness / 2.0
    panels = {
        "-x": Box([-sx + t, 0, 0], [t, sy, sz]),
        "+x": Box([sx - t, 0, 0], [t, sy, sz]),
        "-y": Box([0, -sy + t, 0], [sx - 2 * t, t, sz]),
        "+y": Box([0, sy - t, 0], [sx - 2 * t, t, sz]),
        "-z": Box([0, 0, -sz + t], [sx - 2 * t, sy - 2 * t, t]),
        "+z": Box([0, 0, sz - t], [sx - 2 * t, sy - 2 * t, t]),
    }
    out = []
    for name, panel in panels.items():
        if name == open_face:
            continue
        panel.albedo = _tinted(color)
        out.append(panel)
    return out


def hinge_box() -> ArticulatedScene:
    th = 0.04
    body = _panel_cabinet((0.9, 0.9, 0.5), th, (0.85, 0.5, 0.2), open_face="+z")
    lid = Box([0.0, 0.0, 0.25 + th / 2], [0.45, 0.45, th / 2], albedo=_tinted((0.2, 0.45, 0.85)))
    part = MovablePart(lid, "revolute", [0.0, -1.0, 0.0], [-0.45, 0.0, 0.25], (0.0, 0.6 * math.pi))
    return ArticulatedScene(body, [part], name="hinge-box")


def drawer_box() -> ArticulatedScene:
    body = _panel_cabinet((0.8, 0.9, 0.7), 0.04, (0.55, 0.6, 0.65), open_face="+x")
    drawer = Box([0.02, 0.0, 0.0], [0.37, 0.4, 0.3], albedo=_tinted((0.85, 0.3, 0.25)))
    part = MovablePart(drawer, "prismatic", [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], (0.0, 0.55))
    return ArticulatedScene(body, [part], name="drawer-box")


def two_part() -> ArticulatedScene:
    th = 0.04
    body = _panel_cabinet((0.8, 0.9, 1.0), th, (0.6, 0.62, 0.55), open_face="+x")
    shelf = Box([0.0, 0.0, 0.0], [0.4 - th, 0.45 - th, th / 2], albedo=_tinted((0.6, 0.62, 0.55)))
    door = Box([0.4 + th / 2, 0.0, 0.25], [th / 2, 0.45, 0.24], albedo=_tinted((0.25, 0.55, 0.85)))
    door_part = MovablePart(door, "revolute", [0.0, 0.0, -1.0], [0.4, -0.45, 0.25], (0.0, 0.5 * math.pi))
    drawer = Box([0.02, 0.0, -0.25], [0.37, 0.4, 0.2], albedo=_tinted((0.85, 0.35, 0.2)))
    drawer_part = MovablePart(drawer, "prismatic", [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], (0.0, 0.5))
    return ArticulatedScene(body + [shelf], [door_part, drawer_part], name="two-part")


def three_drawer() -> ArticulatedScene:
    th = 0.04
    body = _panel_cabinet((0.8, 0.9, 1.05), th, (0.6, 0.6, 0.6), open_face="+x")
    colors = [(0.85, 0.25, 0.2), (0.25, 0.7, 0.3), (0.2, 0.35, 0.85)]
    parts = []
    for i, color in enumerate(colors):
        z = 0.33 - 0.33 * i
        drawer = Box([0.02, 0.0, z], [0.37, 0.4, 0.155], albedo=_tinted(color))
        parts.append(MovablePart(drawer, "prismatic", [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], (0.0, 0.45)))
    return ArticulatedScene(body, parts, name="three-drawer")


PRESETS = {
    "hinge-box": hinge_box,
    "drawer-box": drawer_box,
    "two-part": two_part,
    "three-drawer": three_drawer,
}


def recentered(scene: ArticulatedScene, samples: int = 33) -> ArticulatedScene:
    """Shift all geometry so the box swept over every pose is centered on the origin."""
    corners = [b.corners() for b in scene.static]
    for part in scene.parts:
        for q in np.linspace(0.0, 1.0, samples):
            corners.append(part.box.transformed(pose_part(part, float(q))).corners())
    pts = np.concatenate(corners)
    shift = RigidTransform(np.eye(3), -0.5 * (pts.min(axis=0) + pts.max(axis=0)))
    parts = [
        MovablePart(p.box.transformed(shift), p.joint, p.axis, shift.apply(p.pivot), p.motion_range)
        for p in scene.parts
    ]
    return ArticulatedScene([b.transformed(shift) for b in scene.static], parts, scene.background, scene.name)


def make_preset(name: str) -> ArticulatedScene:
    try:
        build = PRESETS[name]
    except KeyError:
        raise SceneError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return recentered(build())


def preset_schedule(name: str, n_states: int) -> tuple[list[list[float]], list[list[float]]]:
    """Per-part fractions for the training states and the held-out evaluation state.

    Single-trajectory presets move every part together through ``n_states``
    linearly spaced fractions and evaluate at 1/2. ``three-drawer`` opens one
    drawer at a time from the closed pose (``n_states / 3`` steps per drawer,
    others closed) and evaluates halfway between the first two steps of drawer 0.
    """
    if n_states < 2:
        raise SceneError("need at least two states")
    scene = make_preset(name)
    if name != "three-drawer":
        fracs = [i / (n_states - 1) for i in range(n_states)]
        return [[f] * scene.n_parts for f in fracs], [[0.5] * scene.n_parts]
    if n_states % 3:
        raise SceneError("three-drawer needs a state count divisible by 3")
    per = n_states // 3
    states = []
    for d in range(3):
        for k in range(1, per + 1):
            q = [0.0, 0.0, 0.0]
            q[d] = k / per
            states.append(q)
    mid = (1.5 / per) if per >= 2 else 0.5
    return states, [[mid, 0.0, 0.0]]
