"""Command line entry point: ``thermalfield {convert,synth,train,render,eval,mesh}``.

Failures print one JSON line to stderr, then a readable sentence, and exit
nonzero (2 for bad input or configuration, 1 for runtime faults).
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from .dataset import DatasetError, load_dataset, save_dataset
from .mesh import default_iso, export_mesh, load_density_grid, marching_cubes, save_density_grid, watertight_check
from .render import SamplingConfig, field_thermal_at, render_density_grid, render_image
from .synthetic import PRESETS, make_fixture
from .thermal_image import (
    PGMDecodeError,
    calibration_from_meta,
    decode_pgm,
    encode_pgm8,
    encode_ppm,
    thermal_map,
    to_pseudo_color,
)
from .train import ConfigError, TrainConfig, TrainData, checkpoint_box, evaluate_views, fit, load_checkpoint


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 2, problems: list[str] | None = None):
        super().__init__(message)
        self.kind = kind
        self.code = code
        self.problems = problems or []


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("THERMALFIELD_WORKERS")
    if env is None:
        return 1
    if not env.isdigit() or int(env) < 1:
        raise CliError("config", f"THERMALFIELD_WORKERS must be a positive integer, got {env!r}")
    return int(env)


def _load(root):
    try:
        return load_dataset(root)
    except (DatasetError, PGMDecodeError, ValueError) as exc:
        raise CliError("dataset", f"{root}: {exc}") from exc


def cmd_convert(args) -> dict:
    raw_dir = Path(args.raw)
    files = sorted((raw_dir / "images").glob("*.pgm")) or sorted(raw_dir.glob("*.pgm"))
    if not files:
        raise CliError("dataset", f"no .pgm images under {raw_dir}")
    meta_path = Path(args.meta) if args.meta else raw_dir / "meta.json"
    if not meta_path.is_file():
        raise CliError("calibration", f"calibration file {meta_path} not found")
    meta = json.loads(meta_path.read_text())
    try:
        cal = calibration_from_meta(meta)
    except (KeyError, ValueError) as exc:
        raise CliError("calibration", str(exc)) from exc
    raws = []
    for f in files:
        try:
            raws.append(decode_pgm(f.read_bytes()))
        except PGMDecodeError as exc:
            raise CliError("decode", f"{f}: {exc}") from exc
    images, stats = thermal_map(raws, cal)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for f, img in zip(files, images):
        (out / "images" / f.name).write_bytes(encode_pgm8(img))
    meta_out = {k: v for k, v in meta.items() if k not in ("t_min", "t_max")}
    meta_out.update(k=cal.k, b=cal.b, t_min=stats.t_min, t_max=stats.t_max)
    (out / "meta.json").write_text(json.dumps(meta_out, indent=1))
    if (raw_dir / "poses.json").is_file():
        shutil.copyfile(raw_dir / "poses.json", out / "poses.json")
    return {"images": len(images), "t_min": stats.t_min, "t_max": stats.t_max}


def cmd_synth(args) -> dict:
    bundle = make_fixture(args.preset, args.views, args.res, args.test_views, args.samples)
    save_dataset(bundle, args.out, args.bit_depth)
    return {"views": len(bundle.images), "out": str(args.out)}


def _train_config(args) -> TrainConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("config", f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise CliError("config", "config file must hold a JSON object")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.iterations is not None:
        data["iterations"] = args.iterations
    if args.no_pose_refine:
        data["pose_refinement"] = False
    if args.no_structural:
        data["structural_loss"] = False
    try:
        return TrainConfig.from_dict(data)
    except ConfigError as exc:
        raise CliError("config", "invalid training config", problems=exc.problems) from exc


def cmd_train(args) -> dict:
    config = _train_config(args)
    if _workers(args) != 1:
        print("note: training runs single-worker; --workers only affects rendering", file=sys.stderr)
    bundle = _load(args.data)
    data = TrainData.from_bundle(bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=1))
    state = None
    if args.resume:
        state, _ = load_checkpoint(args.resume)
    with open(out / "train_log.jsonl", "a") as log:
        state, history = fit(data, config, state, out_dir=out, log_file=log)
    last = history[-1] if history else {}
    return {"step": state.step, "checkpoint": str(out / "checkpoint.tfld")} | {k: last[k] for k in ("l_pix", "l_str", "l_tot") if k in last}


def _view_indices(bundle, views: str) -> list[int]:
    if views in ("train", "test", "all"):
        return bundle.indices(views)
    try:
        idx = [int(s) for s in views.split(",")]
    except ValueError as exc:
        raise CliError("usage", f"--views must be train, test, all or a comma list of indices, got {views!r}") from exc
    bad = [i for i in idx if not 0 <= i < len(bundle.images)]
    if bad:
        raise CliError("usage", f"view indices out of range: {bad}")
    return idx


def cmd_render(args) -> dict:
    state, meta = load_checkpoint(args.checkpoint)
    bundle = _load(args.data)
    box = checkpoint_box(meta)
    cfg = SamplingConfig(args.samples or meta["config"]["samples_per_ray"], stratified=False, seed=args.seed or 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i in _view_indices(bundle, args.views):
        img = render_image(state.params, bundle.poses[i], bundle.intrinsics, bundle.near, bundle.far, box, cfg, workers=_workers(args))
        stem = Path(bundle.names[i]).stem
        (out / f"{stem}.pgm").write_bytes(encode_pgm8(img))
        np.save(out / f"{stem}.npy", img.values)
        if args.pseudo_color:
            (out / f"{stem}.ppm").write_bytes(encode_ppm(to_pseudo_color(img)))
        written.append(stem)
    return {"rendered": written}


def cmd_eval(args) -> dict:
    state, meta = load_checkpoint(args.checkpoint)
    bundle = _load(args.data)
    samples = args.samples or meta["config"]["samples_per_ray"]
    try:
        scores = evaluate_views(state.params, bundle, args.split, samples, workers=_workers(args))
    except ValueError as exc:
        raise CliError("usage", str(exc)) from exc
    print("view\tpsnr\tssim\thssim")
    for row in scores["per_view"]:
        print(f"{row['name']}\t{row['psnr']:.4f}\t{row['ssim']:.4f}\t{row['hssim']:.4f}")
    print(f"mean\t{scores['psnr']:.4f}\t{scores['ssim']:.4f}\t{scores['hssim']:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(scores, indent=1))
    return scores


def cmd_mesh(args) -> dict:
    if args.grid:
        grid = load_density_grid(args.grid)
        params = None
    else:
        if not args.checkpoint:
            raise CliError("usage", "mesh needs --checkpoint or --grid")
        state, meta = load_checkpoint(args.checkpoint)
        params = state.params
        grid = render_density_grid(params, checkpoint_box(meta), args.resolution)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.save_grid:
        save_density_grid(args.save_grid, grid)
    iso = args.iso if args.iso is not None else default_iso(grid)
    mesh = marching_cubes(grid, iso)
    if params is not None and len(mesh.vertices):
        mesh.scalars = field_thermal_at(params, mesh.vertices, grid.box)
    export_mesh(mesh, out)
    report = watertight_check(mesh)
    return {"vertices": len(mesh.vertices), "triangles": len(mesh.triangles), "iso": iso, "watertight": report.watertight}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thermalfield", description="Thermal radiance fields from 16-bit IR sequences.")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="single source of randomness")
    common.add_argument("--workers", type=int, default=None, help="parallel render workers (env THERMALFIELD_WORKERS)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", parents=[common], help="raw 16-bit PGMs -> normalized dataset")
    p.add_argument("--raw", required=True, help="directory of raw PGMs (or with images/)")
    p.add_argument("--meta", help="JSON with calibration k and b (default: <raw>/meta.json)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.add_argument("--preset", choices=sorted(PRESETS), default="blobs")
    p.add_argument("--views", type=int, default=24)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--test-views", type=int, default=4)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="fit a field (and pose corrections)")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="JSON file with training options")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-pose-refine", action="store_true")
    p.add_argument("--no-structural", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", parents=[common], help="render dataset views from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--views", default="test", help="train, test, all or comma-separated indices")
    p.add_argument("--samples", type=int)
    p.add_argument("--pseudo-color", action="store_true", help="also write jet-colored PPMs")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common], help="PSNR/SSIM/HSSIM on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--samples", type=int)
    p.add_argument("--out", help="also write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mesh", parents=[common], help="extract a heat-source mesh as PLY")
    p.add_argument("--checkpoint")
    p.add_argument("--grid", help="use a saved density grid instead of a checkpoint")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--iso", type=float)
    p.add_argument("--save-grid", help="write the sampled density grid here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mesh)
    return parser


def _fail(kind: str, message: str, problems: list[str], code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "problems": problems}), file=sys.stderr)
    detail = f": {'; '.join(problems)}" if problems else ""
    print(f"thermalfield failed ({kind}): {message}{detail}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.workers is not None and args.workers < 1:
            raise CliError("usage", "--workers must be >= 1")
        result = args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), exc.problems, exc.code)
    except (OSError, ValueError, FloatingPointError) as exc:
        return _fail(type(exc).__name__, str(exc), [], 1)
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
