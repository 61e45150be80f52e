"""Ground-truth ray tracing of posed boxes and area-uniform surface sampling."""

from __future__ import annotations

import numpy as np

from .cameras import Camera
from .scene import ArticulatedScene, Box

AMBIENT = 0.25


def intersect_box(box: Box, origins: np.ndarray, dirs: np.ndarray):
    """Slab test in the box frame. Returns (t_hit, face_index); misses give t=inf, face=-1."""
    o = (origins - box.center) @ box.rotation
    d = dirs @ box.rotation
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (-box.half - o) * inv
        t1 = (box.half - o) * inv
    # rays parallel to a slab: inside -> unbounded, outside -> empty
    parallel = d == 0.0
    inside = np.abs(o) <= box.half
    t0 = np.where(parallel, np.where(inside, -np.inf, np.inf), t0)
    t1 = np.where(parallel, np.where(inside, np.inf, -np.inf), t1)
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    axis = np.argmax(tmin, axis=1)
    t_near = tmin[np.arange(len(o)), axis]
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    # entering through the -axis face when travelling along +axis
    entering_neg = d[np.arange(len(o)), axis] > 0
    face = 2 * axis + np.where(entering_neg, 0, 1)
    t_hit = np.where(hit, t_near, np.inf)
    return t_hit, np.where(hit, face, -1)


def trace(boxes: list[Box], origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit over all boxes: (t, box index, face index)."""
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_box = np.full(n, -1)
    best_face = np.full(n, -1)
    for i, box in enumerate(boxes):
        t, face = intersect_box(box, origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_box = np.where(closer, i, best_box)
        best_face = np.where(closer, face, best_face)
    return best_t, best_box, best_face


def render_gt(scene: ArticulatedScene, q, camera: Camera):
    """Render (rgb in [0,1], boolean mask, depth with +inf for misses) for one camera."""
    boxes = scene.posed_boxes(q)
    origins, dirs = camera.rays()
    t, box_idx, face = trace(boxes, origins, dirs)
    hit = np.isfinite(t)
    rgb = np.broadcast_to(scene.background, (len(t), 3)).copy()
    for i, box in enumerate(boxes):
        sel = hit & (box_idx == i)
        if not sel.any():
            continue
        f = face[sel]
        axis = f // 2
        sign = np.where(f % 2 == 0, -1.0, 1.0)
        normals = box.rotation[:, axis].T * sign[:, None]
        # head-light: light sits at the camera
        cos = np.abs(np.sum(normals * dirs[sel], axis=1))
        shade = AMBIENT + (1.0 - AMBIENT) * cos
        rgb[sel] = box.albedo[f] * shade[:, None]
    shape = (camera.height, camera.width)
    return rgb.reshape(*shape, 3), hit.reshape(shape), t.reshape(shape)


def sample_surface_points(scene: ArticulatedScene, q, n: int, seed: int) -> np.ndarray:
    """Area-uniform samples over all faces of the posed boxes."""
    if n < 1:
        raise ValueError("n must be at least 1")
    boxes = scene.posed_boxes(q)
    areas = np.concatenate([b.face_areas() for b in boxes])
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(areas), size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    out = np.empty((n, 3))
    for j in np.unique(pick):
        box = boxes[j // 6]
        f = j % 6
        axis = f // 2
        sign = -1.0 if f % 2 == 0 else 1.0
        others = [a for a in range(3) if a != axis]
        sel = pick == j
        local = np.zeros((int(sel.sum()), 3))
        local[:, axis] = sign * box.half[axis]
        local[:, others[0]] = uv[sel, 0] * box.half[others[0]]
        local[:, others[1]] = uv[sel, 1] * box.half[others[1]]
        out[sel] = box.center + local @ box.rotation.T
    return out
