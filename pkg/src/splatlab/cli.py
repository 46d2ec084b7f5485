"""Command-line entry point: render, characterize, simulate, loss, gen-scene.

Configuration comes from an optional JSON file plus flag overrides (flags
win); SPLATLAB_OUT_DIR overrides the configured output directory but yields
to an explicit --out-dir. Exit codes: 0 ok, 1 usage, 2 input error,
3 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import metrics
from .cache import CacheConfig, CacheGroupManager
from .hwsim import HwConfig, account_frame
from .images import write_image
from .pipeline import RenderConfig, TileGrid, bin_and_sort, project_cloud, render_frame
from .plyio import PlyFormatError, load_ply_file, save_ply_file
from .scale_loss import ScaleLossConfig, l_scale, l_scale_grad
from .scene import SceneError, SceneSpec, generate_synthetic_cloud
from .scheduler import SortReuseConfig, SortReuseScheduler, read_pose_trace

MODES = ("baseline", "sortreuse", "cached", "sortreuse+cached")
VARIANTS = ("gpu", "gpu+sortreuse", "gpu+cached", "accel",
            "accel+sortreuse", "accel+cached", "full")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    scene_ply: str | None = None
    scene_synthetic: dict | None = None  # SceneSpec fields plus "seed"
    trace: str | None = None
    mode: str = "baseline"
    reference: str | None = None
    sortreuse: SortReuseConfig = field(default_factory=SortReuseConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    hw: HwConfig = field(default_factory=HwConfig)
    out_dir: str = "out"
    image_format: str = "ppm"
    workers: int = 1
    tile_size: int = 16
    background: tuple = (0.0, 0.0, 0.0)
    metrics_psnr: bool = True
    metrics_ssim: bool = True

    def validate(self) -> None:
        if (self.scene_ply is None) == (self.scene_synthetic is None):
            raise UsageError("exactly one scene source required (scene_ply or scene_synthetic)")
        if self.mode not in MODES:
            raise UsageError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.reference is not None and self.reference not in MODES:
            raise UsageError(f"reference must be one of {MODES}")
        if self.image_format not in ("ppm", "png"):
            raise UsageError(f"image_format must be ppm or png, got {self.image_format!r}")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        d["sortreuse"] = asdict(self.sortreuse)
        d["cache"] = asdict(self.cache)
        d["cache"]["group_tiles"] = list(self.cache.group_tiles)
        d["hw"] = asdict(self.hw)
        d["hw"]["unit_grid"] = list(self.hw.unit_grid)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        sr = d.pop("sortreuse", {})
        ca = dict(d.pop("cache", {}))
        hw = dict(d.pop("hw", {}))
        if "group_tiles" in ca:
            ca["group_tiles"] = tuple(ca["group_tiles"])
        if "unit_grid" in hw:
            hw["unit_grid"] = tuple(hw["unit_grid"])
        if "background" in d:
            d["background"] = tuple(d["background"])
        cfg = RunConfig(
            sortreuse=SortReuseConfig(**sr), cache=CacheConfig(**ca), hw=HwConfig(**hw), **d
        )
        return cfg


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return RunConfig.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _load_scene(cfg: RunConfig):
    if cfg.scene_ply is not None:
        try:
            return load_ply_file(cfg.scene_ply)
        except OSError as exc:
            raise InputError(f"{cfg.scene_ply}: {exc}") from exc
    spec_dict = dict(cfg.scene_synthetic)
    seed = int(spec_dict.pop("seed", 0))
    return generate_synthetic_cloud(SceneSpec.from_dict(spec_dict), seed)


def _load_trace(cfg: RunConfig):
    if cfg.trace is None:
        raise UsageError("this command requires a pose trace (--trace)")
    try:
        return read_pose_trace(cfg.trace)
    except OSError as exc:
        raise InputError(f"{cfg.trace}: {exc}") from exc


def _render_config(cfg: RunConfig, mode: str, capture_contributions=False):
    manager = None
    if "cached" in mode:
        manager = CacheGroupManager(cfg.cache)
    return RenderConfig(
        tile_size=cfg.tile_size, background=cfg.background, workers=cfg.workers,
        cache_manager=manager, cache_k=cfg.cache.k,
        capture_contributions=capture_contributions,
    ), manager


def run_trace(cfg: RunConfig, mode: str, cloud, poses, capture_contributions=False):
    """Render a pose trace under one mode.

    Returns (frames, events, manager, cache_rows): frames is a list of
    (image, stats); events is None for unscheduled modes; cache_rows are
    per-frame cache counter deltas.
    """
    rcfg, manager = _render_config(cfg, mode, capture_contributions)
    frames = []
    events = None
    cache_rows = []
    prev_counts: dict = {}

    def record_cache(frame_idx):
        if manager is None:
            return
        for row in manager.counters():
            gid = row["group_id"]
            prev = prev_counts.get(gid, {})
            delta = {k: row[k] - prev.get(k, 0) for k in
                     ("lookups", "hits", "misses", "evictions", "swaps")}
            prev_counts[gid] = {k: row[k] for k in
                                ("lookups", "hits", "misses", "evictions", "swaps")}
            cache_rows.append({"frame": frame_idx, "group_id": gid, **delta})

    if "sortreuse" in mode:
        scheduler = SortReuseScheduler(cloud, cfg.sortreuse, rcfg)
        events = []
        for i, pose in enumerate(poses):
            image, stats, event = scheduler.step(pose)
            frames.append((image, stats))
            events.append(event)
            record_cache(i)
    else:
        for i, pose in enumerate(poses):
            image, stats = render_frame(cloud, pose, rcfg)
            frames.append((image, stats))
            record_cache(i)
    return frames, events, manager, cache_rows


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_render(cfg: RunConfig) -> int:
    cloud = _load_scene(cfg)
    poses, _ = _load_trace(cfg)
    out = _out_dir(cfg)

    frames, _, _, cache_rows = run_trace(cfg, cfg.mode, cloud, poses)
    for i, (image, _) in enumerate(frames):
        write_image(out / f"frame_{i:04d}.{cfg.image_format}", image, cfg.image_format)

    if cache_rows:
        metrics.write_csv(out / "cache_stats.csv",
                          ["frame", "group_id", "lookups", "hits", "misses",
                           "evictions", "swaps"], cache_rows)

    if cfg.reference is not None:
        ref_frames, _, _, _ = run_trace(cfg, cfg.reference, cloud, poses)
        rows = []
        for i, ((img, _), (ref, _)) in enumerate(zip(frames, ref_frames)):
            row = {"frame": i}
            if cfg.metrics_psnr:
                row["psnr_db"] = f"{metrics.psnr(img, ref):.4f}"
            if cfg.metrics_ssim:
                row["ssim"] = f"{metrics.ssim(img, ref):.6f}"
            rows.append(row)
        fields = ["frame"] + (["psnr_db"] if cfg.metrics_psnr else []) \
            + (["ssim"] if cfg.metrics_ssim else [])
        metrics.write_csv(out / "quality.csv", fields, rows)

    print(f"rendered {len(frames)} frames ({cfg.mode}) -> {out}")
    return EXIT_OK


def cmd_characterize(cfg: RunConfig) -> int:
    cloud = _load_scene(cfg)
    poses, _ = _load_trace(cfg)
    out = _out_dir(cfg)

    frames, _, _, _ = run_trace(cfg, cfg.mode, cloud, poses, capture_contributions=True)
    grid = TileGrid.for_image(poses[0].width, poses[0].height, cfg.tile_size) if poses else None
    tables = [bin_and_sort(project_cloud(cloud, pose), grid, pose) for pose in poses]
    report = metrics.build_charz_report(frames, tables=tables)

    metrics.write_csv(out / "fig4.csv",
                      ["frame", "sig_fraction_mean", "sig_fraction_std", "iterated_mean"],
                      [{"frame": r["frame"],
                        "sig_fraction_mean": f"{r['mean_fraction']:.6f}",
                        "sig_fraction_std": f"{r['std_fraction']:.6f}",
                        "iterated_mean": f"{r['mean_iterated']:.3f}"}
                       for r in report.significant])

    grid_pts = np.linspace(0.0, 1.0, len(report.contribution)) if len(report.contribution) else []
    metrics.write_csv(out / "fig8.csv", ["rank_fraction", "cumulative_share"],
                      [{"rank_fraction": f"{g:.4f}", "cumulative_share": f"{v:.6f}"}
                       for g, v in zip(grid_pts, report.contribution)])

    metrics.write_csv(out / "fig9.csv", ["k", "mean_abs_diff", "matched_pixels"],
                      [{"k": r["k"], "mean_abs_diff": f"{r['mean_abs_diff']:.6f}",
                        "matched_pixels": r["matched_pixels"]}
                       for r in report.color_difference])

    metrics.write_csv(out / "inversions.csv", ["frame_pair", "rate", "inversions", "pairs"],
                      [{"frame_pair": r["frame_pair"], "rate": f"{r['rate']:.6f}",
                        "inversions": r["inversions"], "pairs": r["pairs"]}
                       for r in report.inversions])

    print(f"characterized {len(frames)} frames -> {out}")
    return EXIT_OK


_VARIANT_PLAN = {
    "gpu": ("baseline", "gpu", "per_pixel"),
    "gpu+sortreuse": ("sortreuse", "gpu", "per_pixel"),
    "gpu+cached": ("cached", "gpu", "per_pixel"),
    "accel": ("baseline", "accel", "per_pixel"),
    "accel+sortreuse": ("sortreuse", "accel", "per_pixel"),
    "accel+cached": ("cached", "accel", "remapped"),
    "full": ("sortreuse+cached", "accel", "remapped"),
}


def cmd_simulate(cfg: RunConfig, variants=None, breakdown: bool = False) -> int:
    cloud = _load_scene(cfg)
    poses, _ = _load_trace(cfg)
    out = _out_dir(cfg)
    variants = list(variants) if variants else ["gpu", "accel"]
    for v in variants:
        if v not in _VARIANT_PLAN:
            raise UsageError(f"unknown variant {v!r}; choose from {sorted(_VARIANT_PLAN)}")

    reports = {}
    for variant in variants:
        mode, engine, accel_mode = _VARIANT_PLAN[variant]
        frames, events, manager, _ = run_trace(cfg, mode, cloud, poses)
        report = account_frame(
            [s for _, s in frames], cfg.hw, engine=engine, accel_mode=accel_mode,
            events=events, cache_swaps=manager.swaps if manager else 0,
            cache_size_bytes=cfg.cache.size_bytes,
        )
        reports[variant] = report

    base = reports.get("gpu")
    result = {}
    for variant, report in reports.items():
        d = report.to_dict()
        d.pop("per_frame")
        d["fps_modeled"] = report.fps(cfg.hw.clock_hz)
        if base is not None and report.total_cycles > 0:
            d["speedup_vs_gpu"] = base.total_cycles / report.total_cycles
            d["energy_vs_gpu"] = (report.energy_total / base.energy_total
                                  if base.energy_total > 0 else None)
        result[variant] = d
    with open(out / "sim.json", "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if breakdown:
        rows = []
        for variant, report in reports.items():
            total = report.total_cycles or 1.0
            rows.append({
                "variant": variant,
                "projection_cycles": f"{report.projection_cycles:.1f}",
                "sorting_cycles": f"{report.sorting_cycles:.1f}",
                "raster_cycles": f"{report.raster_cycles:.1f}",
                "projection_share": f"{report.projection_cycles / total:.4f}",
                "sorting_share": f"{report.sorting_cycles / total:.4f}",
                "raster_share": f"{report.raster_cycles / total:.4f}",
            })
        metrics.write_csv(out / "breakdown.csv",
                          ["variant", "projection_cycles", "sorting_cycles", "raster_cycles",
                           "projection_share", "sorting_share", "raster_share"], rows)

    print(f"simulated {len(variants)} variants over {len(poses)} frames -> {out}")
    return EXIT_OK


def cmd_loss(args) -> int:
    try:
        cloud = load_ply_file(args.ply)
    except OSError as exc:
        raise InputError(f"{args.ply}: {exc}") from exc
    cfg = ScaleLossConfig(weight=args.weight, threshold=args.threshold)
    loss = l_scale(cloud, cfg)
    grad = l_scale_grad(cloud, cfg)
    result = {
        "n_gaussians": len(cloud),
        "threshold": cfg.threshold,
        "weight": cfg.weight,
        "l_scale": loss,
        "weighted": cfg.weight * loss,
        "grad_max_abs": float(np.abs(grad).max()) if len(cloud) else 0.0,
        "grad_frobenius": float(np.linalg.norm(grad)),
    }
    if args.full_grad:
        result["gradient"] = grad.tolist()
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gen_scene(args) -> int:
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec_dict = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{args.spec}: {exc}") from exc
    seed = int(spec_dict.pop("seed", args.seed))
    cloud = generate_synthetic_cloud(SceneSpec.from_dict(spec_dict), seed)
    save_ply_file(cloud, args.out)
    print(f"wrote {len(cloud)} gaussians -> {args.out}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="splatlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--scene-ply", help="scene PLY path")
        p.add_argument("--scene-spec", help="JSON synthetic scene spec (with optional seed)")
        p.add_argument("--trace", help="pose trace (JSON lines)")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--reference", choices=MODES)
        p.add_argument("--out-dir")
        p.add_argument("--workers", type=int)
        p.add_argument("--image-format", choices=("ppm", "png"))
        p.add_argument("--window", type=int, help="frames per shared sort")
        p.add_argument("--margin", type=int, help="viewport expansion in pixels per side")
        p.add_argument("--cache-k", type=int, help="significant IDs per cache key")

    for name in ("render", "characterize", "simulate"):
        p = sub.add_parser(name)
        add_common(p)
        if name == "simulate":
            p.add_argument("--variants", nargs="+", metavar="VARIANT",
                           help=f"subset of {sorted(_VARIANT_PLAN)}")
            p.add_argument("--breakdown", action="store_true",
                           help="emit per-stage cycle shares as breakdown.csv")

    p = sub.add_parser("loss")
    p.add_argument("--ply", required=True)
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--weight", type=float, default=1.0)
    p.add_argument("--full-grad", action="store_true")

    p = sub.add_parser("gen-scene")
    p.add_argument("--spec", required=True, help="JSON scene spec file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output PLY path")

    return parser


def _config_from_args(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.scene_ply:
        cfg.scene_ply = args.scene_ply
        cfg.scene_synthetic = None
    if args.scene_spec:
        try:
            with open(args.scene_spec, "r", encoding="utf-8") as fh:
                cfg.scene_synthetic = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{args.scene_spec}: {exc}") from exc
        cfg.scene_ply = None
    if args.trace:
        cfg.trace = args.trace
    if args.mode:
        cfg.mode = args.mode
    if args.reference:
        cfg.reference = args.reference
    env_out = os.environ.get("SPLATLAB_OUT_DIR")
    if env_out:
        cfg.out_dir = env_out
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.workers:
        cfg.workers = args.workers
    if args.image_format:
        cfg.image_format = args.image_format
    if args.window:
        cfg.sortreuse = SortReuseConfig(window=args.window, margin_px=cfg.sortreuse.margin_px,
                                        frame_interval=cfg.sortreuse.frame_interval)
    if args.margin is not None:
        cfg.sortreuse = SortReuseConfig(window=cfg.sortreuse.window, margin_px=args.margin,
                                        frame_interval=cfg.sortreuse.frame_interval)
    if args.cache_k:
        sets = 1 << (args.cache_k * cfg.cache.index_bits_per_id)
        cfg.cache = CacheConfig(k=args.cache_k, ways=cfg.cache.ways, sets=sets,
                                index_bits_per_id=cfg.cache.index_bits_per_id,
                                tag_low_bit=cfg.cache.tag_low_bit,
                                tag_bits_per_id=cfg.cache.tag_bits_per_id,
                                group_tiles=cfg.cache.group_tiles)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "loss":
            return cmd_loss(args)
        if args.command == "gen-scene":
            return cmd_gen_scene(args)
        cfg = _config_from_args(args)
        if args.command == "render":
            return cmd_render(cfg)
        if args.command == "characterize":
            return cmd_characterize(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, variants=args.variants, breakdown=args.breakdown)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, PlyFormatError, SceneError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BrokenPipeError:
        return EXIT_OK
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
