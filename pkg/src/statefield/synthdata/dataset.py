"""Multi-view, multi-state datasets: generation and the on-disk format.

Layout of a dataset directory::

    meta.json
    state_<id>/cam_<i>_rgb.png
    state_<id>/cam_<i>_mask.png
    state_<id>/cam_<i>_depth.npyish
    state_<id>/points.csv

Training states use integer ids ``0..T-1``; held-out evaluation states use
``eval<k>`` ids and live in ``state_eval<k>/``.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .cameras import Camera, generate_dome_cameras
from .raytrace import render_gt, sample_surface_points
from .scene import ArticulatedScene, make_preset, preset_schedule

DEPTH_MAGIC = b"AFD1"
FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


@dataclass
class View:
    rgb: np.ndarray  # uint8 (H, W, 3)
    mask: np.ndarray  # uint8 (H, W), values {0, 255}
    depth: np.ndarray  # float32 (H, W), 0 where the ray missed

    @property
    def hit(self) -> np.ndarray:
        return self.mask > 127


@dataclass
class StateRecord:
    id: int | str
    fraction: float
    parts: list[float]
    views: list[View]
    points: np.ndarray

    @property
    def dirname(self) -> str:
        return f"state_{self.id}"


@dataclass
class StateDataset:
    scene: ArticulatedScene
    cameras: list[Camera]
    states: list[StateRecord]
    eval_states: list[StateRecord] = field(default_factory=list)
    preset: str | None = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def fractions(self) -> list[float]:
        return [s.fraction for s in self.states]

    def validate(self) -> None:
        fr = self.fractions
        if any(b <= a for a, b in zip(fr, fr[1:])):
            raise DatasetFormatError(f"state fractions must be strictly increasing, got {fr}")
        for rec in self.states + self.eval_states:
            if len(rec.views) != len(self.cameras):
                raise DatasetFormatError(
                    f"state {rec.id} has {len(rec.views)} views for {len(self.cameras)} cameras"
                )

    def state(self, sid) -> StateRecord:
        for rec in self.states + self.eval_states:
            if rec.id == sid or str(rec.id) == str(sid):
                return rec
        raise DatasetFormatError(f"dataset has no state {sid!r}")

    def scene_radius(self) -> float:
        return self.scene.bounding_radius()


def build_state(scene, sid, fraction, parts, cameras, n_points, seed) -> StateRecord:
    views = []
    for cam in cameras:
        rgb, hit, depth = render_gt(scene, parts, cam)
        views.append(
            View(
                rgb=np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8),
                mask=(hit.astype(np.uint8) * 255),
                depth=np.where(hit, depth, 0.0).astype(np.float32),
            )
        )
    points = sample_surface_points(scene, parts, n_points, seed)
    return StateRecord(sid, float(fraction), [float(p) for p in parts], views, points)


def generate_dataset(
    preset: str,
    n_states: int = 4,
    n_cameras: int = 40,
    *,
    width: int = 64,
    height: int = 64,
    radius: float = 3.0,
    fov: float = np.radians(40.0),
    n_points: int = 10000,
    seed: int = 0,
) -> StateDataset:
    """Render a preset at its training states plus the held-out evaluation state."""
    scene = make_preset(preset)
    train_parts, eval_parts = preset_schedule(preset, n_states)
    cameras = generate_dome_cameras(
        n_cameras, radius, seed, scene_radius=scene.bounding_radius(), fov=fov, width=width, height=height
    )
    states = [
        build_state(scene, t, t / (n_states - 1), parts, cameras, n_points, seed + 1000 + t)
        for t, parts in enumerate(train_parts)
    ]
    evals = []
    for k, parts in enumerate(eval_parts):
        # a scalar progress value for the eval state: mean part fraction
        frac = float(np.mean(parts)) if preset != "three-drawer" else parts[0] / 3.0
        evals.append(build_state(scene, f"eval{k}", frac, parts, cameras, n_points, seed + 2000 + k))
    return StateDataset(scene, cameras, states, evals, preset=preset, seed=seed)


# ---------------------------------------------------------------------------
# depth grid files


def write_depth(path: Path, depth: np.ndarray) -> None:
    h, w = depth.shape
    header = DEPTH_MAGIC + struct.pack("<III", w, h, 0)
    path.write_bytes(header + depth.astype("<f4").tobytes())


def read_depth(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != DEPTH_MAGIC:
        raise DatasetFormatError(f"{path}: bad depth header")
    w, h, _ = struct.unpack("<III", raw[4:16])
    body = raw[16:]
    if len(body) != 4 * w * h:
        raise DatasetFormatError(f"{path}: expected {w}x{h} depth values")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# directory round trip


def _state_meta(rec: StateRecord) -> dict:
    return {"id": rec.id, "fraction": rec.fraction, "parts": rec.parts}


def write_dataset(ds: StateDataset, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": "statefield-dataset",
        "version": FORMAT_VERSION,
        "preset": ds.preset,
        "seed": ds.seed,
        "scene": ds.scene.to_dict(),
        "cameras": [c.to_dict() for c in ds.cameras],
        "states": [_state_meta(s) for s in ds.states],
        "eval_states": [_state_meta(s) for s in ds.eval_states],
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    for rec in ds.states + ds.eval_states:
        sdir = root / rec.dirname
        sdir.mkdir(exist_ok=True)
        for i, view in enumerate(rec.views):
            _save_png(sdir / f"cam_{i}_rgb.png", view.rgb)
            _save_png(sdir / f"cam_{i}_mask.png", view.mask)
            write_depth(sdir / f"cam_{i}_depth.npyish", view.depth)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for p in rec.points:
            writer.writerow([repr(float(v)) for v in p])
        (sdir / "points.csv").write_text(buf.getvalue())


def _save_png(path: Path, arr: np.ndarray) -> None:
    # fixed compression and no metadata keeps files byte-stable
    Image.fromarray(arr).save(path, format="PNG", compress_level=6)


def _load_png(path: Path, sid) -> np.ndarray:
    if not path.exists():
        raise DatasetFormatError(f"state {sid}: missing file {path.name}")
    try:
        with Image.open(path) as im:
            return np.array(im)
    except OSError as exc:
        raise DatasetFormatError(f"state {sid}: unreadable image {path.name}: {exc}") from exc


def _read_state(root: Path, entry: dict, n_cams: int) -> StateRecord:
    sid = entry["id"]
    sdir = root / f"state_{sid}"
    if not sdir.is_dir():
        raise DatasetFormatError(f"state {sid}: missing directory {sdir.name}")
    views = []
    for i in range(n_cams):
        rgb = _load_png(sdir / f"cam_{i}_rgb.png", sid)
        mask = _load_png(sdir / f"cam_{i}_mask.png", sid)
        dpath = sdir / f"cam_{i}_depth.npyish"
        if not dpath.exists():
            raise DatasetFormatError(f"state {sid}: missing file {dpath.name}")
        views.append(View(rgb, mask, read_depth(dpath)))
    ppath = sdir / "points.csv"
    if not ppath.exists():
        raise DatasetFormatError(f"state {sid}: missing file points.csv")
    try:
        rows = [[float(v) for v in row] for row in csv.reader(ppath.read_text().splitlines())]
        points = np.array(rows, dtype=np.float64).reshape(-1, 3)
    except ValueError as exc:
        raise DatasetFormatError(f"state {sid}: corrupt points.csv: {exc}") from exc
    return StateRecord(sid, float(entry["fraction"]), [float(p) for p in entry["parts"]], views, points)


def read_dataset(root) -> StateDataset:
    root = Path(root)
    mpath = root / "meta.json"
    if not mpath.exists():
        raise DatasetFormatError(f"{mpath}: missing dataset metadata")
    try:
        meta = json.loads(mpath.read_text())
        scene = ArticulatedScene.from_dict(meta["scene"])
        cameras = [Camera.from_dict(c) for c in meta["cameras"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{mpath}: corrupt metadata: {exc}") from exc
    if meta.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{mpath}: unsupported dataset version {meta.get('version')}")
    states = [_read_state(root, e, len(cameras)) for e in meta["states"]]
    evals = [_read_state(root, e, len(cameras)) for e in meta.get("eval_states", [])]
    return StateDataset(scene, cameras, states, evals, preset=meta.get("preset"), seed=meta.get("seed", 0))
