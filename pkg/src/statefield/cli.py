"""``statefield`` command line: datagen, train, render, interp, eval, export-latents.

Exit codes: 0 success, 2 usage or config error, 3 numeric abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError
from .hyper import beta_schedule, interpolate_latent, latents_csv
from .synthdata.cameras import CameraConfigError, generate_dome_cameras
from .synthdata.dataset import DatasetFormatError, generate_dataset, read_dataset, write_dataset
from .synthdata.scene import PRESETS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

log = logging.getLogger("statefield")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _load_dataset(path):
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"dataset directory {p} does not exist")
    return read_dataset(p)


def _load_model(path):
    from .train import load_model

    p = Path(path)
    if not p.is_file():
        raise UsageError(f"checkpoint {p} does not exist")
    return load_model(p)


def _parse_ids(text: str | None, n: int) -> list[int]:
    if text is None or text == "all":
        return list(range(n))
    try:
        ids = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"camera list must be comma-separated integers or 'all', got {text!r}") from None
    bad = [i for i in ids if not 0 <= i < n]
    if bad:
        raise UsageError(f"camera ids out of range [0, {n}): {bad}")
    return ids


def _cameras(args, radius_hint: float | None = None):
    """Cameras from a dataset (``--dataset``) or a freshly generated dome (``--views``)."""
    if getattr(args, "dataset", None):
        ds = _load_dataset(args.dataset)
        cams = ds.cameras
        return [cams[i] for i in _parse_ids(args.cameras, len(cams))]
    cams = generate_dome_cameras(
        args.views,
        args.radius,
        args.seed,
        scene_radius=radius_hint or 0.0,
        width=args.size,
        height=args.size,
    )
    return [cams[i] for i in _parse_ids(args.cameras, len(cams))]


def _state_index(model, t: int) -> int:
    if not 0 <= t < model.n_states:
        raise UsageError(f"state id {t} outside the latent table [0, {model.n_states})")
    return t


def _scene_radius(ckpt) -> float | None:
    return ckpt.meta.get("scene_radius")


def load_config(path, overrides: dict):
    from .train import ConfigError, TrainConfig

    base: dict = {}
    if path:
        p = Path(path)
        try:
            base = json.loads(p.read_text())
        except FileNotFoundError:
            raise UsageError(f"config file {p} does not exist") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {p} is not valid JSON: {exc}") from None
        if not isinstance(base, dict):
            raise UsageError(f"config file {p} must hold a JSON object")
    merged = {**base, **overrides}
    try:
        return TrainConfig.from_dict(merged)
    except (ConfigError, ValueError, TypeError) as exc:
        raise UsageError(f"bad config: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands


def cmd_datagen(args) -> int:
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(sorted(PRESETS))}")
    ds = generate_dataset(
        args.preset,
        n_states=args.states,
        n_cameras=args.cameras,
        width=args.size,
        height=args.size,
        radius=args.radius,
        n_points=args.points,
        seed=args.seed,
    )
    write_dataset(ds, args.out)
    log.info("wrote %d states + %d eval states to %s", ds.n_states, len(ds.eval_states), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import TrainingAborted, train

    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.iters is not None:
        overrides["iterations"] = args.iters
    if args.no_manifold:
        overrides["use_manifold"] = False
    if args.no_occ:
        overrides["use_occ"] = False
    if args.no_ds:
        overrides["use_ds"] = False
    cfg = load_config(args.config, overrides)
    if args.pe:
        cfg = dataclasses.replace(cfg, hyper=dataclasses.replace(cfg.hyper, use_pe=True))
    ds = _load_dataset(args.dataset)
    try:
        res = train(ds, cfg, args.out, workers=args.workers)
    except TrainingAborted as exc:
        log.error("%s (last checkpoint: %s)", exc, exc.checkpoint)
        return EXIT_NUMERIC
    out = Path(args.out)
    if args.plots:
        from .plotting import plot_training_curves

        plot_training_curves(out / "metrics.csv", out / "training_curves.png")
    log.info("final checkpoint %s", res.checkpoint_path)
    return EXIT_OK


def cmd_render(args) -> int:
    from .evaluate import write_frames

    model, _, ckpt = _load_model(args.checkpoint)
    t = _state_index(model, args.state)
    cams = _cameras(args, _scene_radius(ckpt))
    z = model.latent(t)
    frames = [model.render_camera(c, z, workers=args.workers)[0] for c in cams]
    write_frames(frames, args.out)
    return EXIT_OK


def cmd_interp(args) -> int:
    from .evaluate import to_uint8
    from PIL import Image

    if args.alpha < 2:
        raise UsageError("alpha must be at least 2")
    model, _, ckpt = _load_model(args.checkpoint)
    a = _state_index(model, args.t_a)
    b = _state_index(model, args.t_b)
    cams = _cameras(args, _scene_radius(ckpt))
    betas = [0.0] + beta_schedule(args.alpha) + [1.0]
    za, zb = model.latent(a), model.latent(b)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["frame,beta"]
    for k, beta in enumerate(betas):
        with ad.no_tape():
            z = interpolate_latent(za, zb, beta)
        for ci, cam in enumerate(cams):
            rgb = model.render_camera(cam, z, workers=args.workers)[0]
            d = out / f"cam_{ci:03d}"
            d.mkdir(exist_ok=True)
            Image.fromarray(to_uint8(rgb)).save(d / f"frame_{k:03d}.png", optimize=False)
        lines.append(f"{k},{beta!r}")
    (out / "frames.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def _write_latents(model, ckpt, path) -> Path:
    fractions = ckpt.meta.get("fractions") or list(np.linspace(0.0, 1.0, model.n_states))
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(latents_csv(model.table.values.data, fractions))
    return p


def cmd_eval(args) -> int:
    from .evaluate import eval_interpolation
    from .plotting import plot_latents, plot_psnr_vs_beta

    model, cfg, ckpt = _load_model(args.checkpoint)
    ds = _load_dataset(args.dataset)
    if ds.n_states != model.n_states:
        raise UsageError(f"checkpoint has {model.n_states} states, dataset has {ds.n_states}")
    out = Path(args.out)
    betas = [float(b) for b in args.betas.split(",")]
    report = eval_interpolation(
        model,
        ds,
        (args.t_a if args.t_a is not None else 0, args.t_b if args.t_b is not None else ds.n_states - 1),
        betas,
        holdout_every=cfg.holdout_every,
        cameras=None if args.cameras is None else _parse_ids(args.cameras, len(ds.cameras)),
        with_chamfer=not args.no_chamfer,
        extract={"grid_res": args.grid, "threshold": args.threshold, "n": args.points},
        frames_dir=out / "frames",
        workers=args.workers,
        meta={"checkpoint_iteration": ckpt.iteration, "seed": cfg.seed},
    )
    report.write(out)
    plot_psnr_vs_beta(report, out / "psnr_vs_beta.png")
    plot_latents(model.table.values.data, ds.fractions, out / "latents.png")
    if args.export_latents:
        _write_latents(model, ckpt, out / "latents.csv")
    return EXIT_OK


def cmd_export_latents(args) -> int:
    model, _, ckpt = _load_model(args.checkpoint)
    _write_latents(model, ckpt, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _camera_args(p):
    p.add_argument("--dataset", help="take cameras from this dataset directory")
    p.add_argument("--cameras", help="comma-separated camera ids or 'all' (default)")
    p.add_argument("--views", type=int, default=8, help="dome camera count when no dataset is given")
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--size", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="statefield", description=__doc__.splitlines()[0])
    parser.add_argument("--workers", type=int, default=1, help="worker threads for rendering (1 = serial)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("datagen", help="render a synthetic multi-state dataset")
    p.add_argument("--preset", required=True)
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--cameras", type=int, default=40)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--points", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a state-conditioned field")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--no-manifold", action="store_true")
    p.add_argument("--no-occ", action="store_true")
    p.add_argument("--no-ds", action="store_true")
    p.add_argument("--pe", action="store_true", help="add positional encoding of the state id to latents")
    p.add_argument("--plots", action="store_true", help="also write training_curves.png")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a seen state")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--state", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _camera_args(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("interp", help="render frames between two seen states")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--t-a", type=int, required=True)
    p.add_argument("--t-b", type=int, required=True)
    p.add_argument("--alpha", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _camera_args(p)
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("eval", help="score seen and interpolated states against ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-a", type=int)
    p.add_argument("--t-b", type=int)
    p.add_argument("--betas", default="0,0.5,1")
    p.add_argument("--cameras", help="camera ids (default: held-out cameras)")
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--threshold", type=float, default=5.0)
    p.add_argument("--points", type=int, default=10000)
    p.add_argument("--no-chamfer", action="store_true")
    p.add_argument("--export-latents", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-latents", help="write the latent table as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_latents)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"statefield: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.workers < 1:
        print("statefield: error: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, CameraConfigError) as exc:
        print(f"statefield: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ad.NumericError as exc:
        print(f"statefield: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetFormatError, CheckpointError, OSError) as exc:
        print(f"statefield: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"statefield: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
