"""
Command-line interface for IsNeRF
synth, train, render, eval and ablate subcommands
"""

import argparse
import json
import logging
import os
import sys
import time
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from src import __version__
from src.config_manager import ConfigManager
from src.dataset import BlurDataset, Checkpoint, load_checkpoint
from src.errors import ConfigError, IsNerfError
from src.image_metrics import LPIPS_NOT_AVAILABLE, psnr, ssim
from src.optimizer import Trainer
from src.scene_forge import (
    ForgeSettings, TrajectorySpec, default_desk_scene, generate_dataset, load_scene,
)
from src.se3_geometry import Pose, pose_error
from src.utils import save_png, setup_logging
from src.volume_renderer import FieldPair, RenderConfig, render_image

logger = logging.getLogger("IsNeRF.CLI")

ABLATION_MODES = ("full", "baseline", "no-islm-train", "no-islm-render", "single-point", "k-sweep")
K_SWEEP = (1, 3, 5, 7, 9)


# ---------------------------------------------------------------------------
# Configuration

def build_config(path: Optional[str] = None, preset: Optional[str] = None,
                 overrides: Optional[Dict] = None) -> ConfigManager:
    """
    Defaults, then preset, then config file, then command-line overrides

    Raises:
        ConfigError: unknown preset or keys, or a failed validation
    """
    manager = ConfigManager()
    if preset and not manager.apply_preset(preset):
        raise ConfigError(f"Unknown preset: {preset}")
    if path:
        manager.merge_file(path)
    if overrides:
        manager.update({k: v for k, v in overrides.items() if v is not None})

    is_valid, error = manager.validate()
    if not is_valid:
        raise ConfigError(f"Invalid configuration: {error}")
    return manager


def load_config(path: Optional[str] = None, preset: Optional[str] = None,
                overrides: Optional[Dict] = None) -> Dict:
    """Validated configuration dictionary; see build_config for the layering"""
    return build_config(path, preset, overrides).get_all()


def configure_logging(args, config: Optional[Dict] = None):
    """Level from the environment, then --log-level, then the run config"""
    config = config or {}
    level = os.getenv("ISNERF_LOG_LEVEL") or args.log_level or config.get("log_level") or "INFO"
    timezone = os.getenv("ISNERF_TIMEZONE") or config.get("timezone") or "UTC"
    setup_logging(args.log_file or config.get("log_file") or None, level, timezone)


def parse_size(text: str):
    try:
        width, height = text.lower().split("x")
        return int(width), int(height)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Size must look like WxH, got {text!r}")


# ---------------------------------------------------------------------------
# Evaluation

def evaluate_checkpoint(ckpt: Checkpoint, dataset: BlurDataset, use_gt_poses: bool = False,
                        render_scattering: Optional[bool] = None, seed: Optional[int] = None) -> pd.DataFrame:
    """
    Per-view metrics of midpoint renders against the held-out sharp views

    Returns:
        DataFrame with columns view, psnr, ssim, lpips, mirror_psnr, rod_psnr,
        rot_err_deg, trans_err (one row per view with a sharp image)
    """
    config = dict(ckpt.config, near=dataset.near, far=dataset.far)
    cfg = RenderConfig.from_config(config)
    if render_scattering is not None:
        cfg = cfg.with_scattering(render_scattering)
    fields = FieldPair(ckpt.field_coarse, ckpt.field_fine)

    rows = []
    for m, view in enumerate(dataset.views):
        sharp = dataset.sharp(m)
        if sharp is None:
            continue
        truth = view.exposure.midpoint()
        learned = ckpt.exposures[m].midpoint() if m < len(ckpt.exposures) else truth
        image = render_image(truth if use_gt_poses else learned, view.intrinsics, fields, ckpt.islm, cfg, seed)
        image = image.clamp(0.0, 1.0)

        mirror = dataset.mask(m, "mirror")
        rod = dataset.mask(m, "rod")
        rot_err, trans_err = pose_error(learned, truth)
        rows.append({
            "view": m,
            "psnr": psnr(image, sharp),
            "ssim": ssim(image, sharp) if min(dataset.width, dataset.height) >= 7 else float('nan'),
            "lpips": LPIPS_NOT_AVAILABLE,
            "mirror_psnr": psnr(image, sharp, mirror) if mirror is not None else float('nan'),
            "rod_psnr": psnr(image, sharp, rod) if rod is not None else float('nan'),
            "rot_err_deg": rot_err,
            "trans_err": trans_err,
        })
    return pd.DataFrame(rows, columns=["view", "psnr", "ssim", "lpips", "mirror_psnr", "rod_psnr",
                                       "rot_err_deg", "trans_err"])


def summarize(frame: pd.DataFrame) -> Dict:
    """Mean of every numeric metric; infinite PSNRs are kept as inf"""
    summary = {}
    for column in ("psnr", "ssim", "mirror_psnr", "rod_psnr", "rot_err_deg", "trans_err"):
        values = frame[column].astype(float)
        summary[column] = float(np.nanmean(values)) if values.notna().any() else float('nan')
    summary["lpips"] = LPIPS_NOT_AVAILABLE
    return summary


# ---------------------------------------------------------------------------
# Commands

def cmd_synth(args) -> int:
    overrides = {"seed": args.seed, "views": args.views, "n_virtual": args.n}
    if args.size:
        overrides["image_width"], overrides["image_height"] = args.size
    config = load_config(args.config, args.preset, overrides)
    configure_logging(args, config)

    scene = default_desk_scene() if args.scene in (None, "desk", "builtin") else load_scene(args.scene)
    generate_dataset(scene, TrajectorySpec.from_config(config), ForgeSettings.from_config(config), args.out)
    print(f"Dataset written to {args.out}")
    return 0


def cmd_train(args) -> int:
    manager = build_config(args.config, args.preset, {"iterations": args.iterations, "seed": args.seed})
    config = manager.get_all()
    configure_logging(args, config)

    if args.dump_config:
        if not manager.save(args.dump_config):
            raise IsNerfError(f"Could not write the configuration to {args.dump_config}")
        print(f"Configuration written to {args.dump_config}")
        return 0

    if not args.data:
        raise ConfigError("train needs --data unless --dump-config is given")
    out_dir = args.out or config["output_dir"]
    dataset = BlurDataset(args.data)
    trainer = Trainer(config, dataset, out_dir)

    if args.gradcheck:
        report = trainer.gradient_report(args.gradcheck)
        significant = report[report[["analytic", "numeric"]].abs().max(axis=1) > 1e-6]
        passed = float((significant["rel_error"] < 1e-3).mean()) if len(significant) else 1.0
        print(report.groupby("group")["rel_error"].describe().to_string())
        print(f"Coordinates within 1e-3 relative error: {passed * 100:.1f}% of {len(significant)}")
        return 0

    trainer.train()
    print(f"Checkpoint and metrics written to {out_dir}")
    return 0


def _pose_from_argument(value: str, ckpt: Checkpoint) -> Pose:
    """Trajectory midpoint of a view index, or a 4x4 matrix read from a JSON file"""
    if value.isdigit():
        index = int(value)
        if index >= len(ckpt.exposures):
            raise IsNerfError(f"Checkpoint has {len(ckpt.exposures)} views, no view {index}")
        return ckpt.exposures[index].midpoint()
    with open(value, 'r') as f:
        data = json.load(f)
    return Pose.from_matrix(data["pose"] if isinstance(data, dict) else data)


def cmd_render(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    config = dict(ckpt.config, near=ckpt.camera["near"], far=ckpt.camera["far"])
    cfg = RenderConfig.from_config(config)
    if args.no_islm:
        cfg = cfg.with_scattering(False)

    pose = _pose_from_argument(args.pose, ckpt)
    image = render_image(pose, ckpt.intrinsics(), FieldPair(ckpt.field_coarse, ckpt.field_fine),
                         ckpt.islm, cfg, args.seed)
    save_png(image, args.out)
    print(f"Rendered {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    dataset = BlurDataset(args.data)
    frame = evaluate_checkpoint(ckpt, dataset, args.gt_poses, False if args.no_islm else None, args.seed)

    summary = summarize(frame)
    table = pd.concat([frame, pd.DataFrame([dict(summary, view="mean")])], ignore_index=True)[frame.columns]
    out = args.out or os.path.join(args.ckpt, "eval.csv")
    table.to_csv(out, index=False)

    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(f"\nMean PSNR {summary['psnr']:.3f} dB | SSIM {summary['ssim']:.4f} | LPIPS {summary['lpips']} | "
          f"mirror PSNR {summary['mirror_psnr']:.3f} | rod PSNR {summary['rod_psnr']:.3f}")
    logger.info(f"Evaluation of {args.ckpt} written to {out}")
    return 0


def _train_variant(config: Dict, dataset: BlurDataset, out_dir: str, iterations: Optional[int]) -> float:
    """Train one ablation variant; returns wall seconds"""
    started = time.perf_counter()
    Trainer(config, dataset, out_dir).train(iterations)
    return time.perf_counter() - started


def cmd_ablate(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    unknown = [m for m in modes if m not in ABLATION_MODES]
    if unknown:
        raise ConfigError(f"Unknown ablation modes: {', '.join(unknown)}")

    base = load_config(args.config, args.preset, {"seed": args.seed})
    configure_logging(args, base)
    dataset = BlurDataset(args.data)
    os.makedirs(args.out, exist_ok=True)

    variants = {
        "full": {},
        "baseline": {"train_scattering": False, "render_scattering": False},
        "no-islm-train": {"train_scattering": False},
        "single-point": {"islm_mode": "single-point"},
    }
    # scattering at evaluation time; None keeps the variant's render_scattering
    render_with = {"baseline": False, "no-islm-train": True, "no-islm-render": False}
    trained: Dict[str, float] = {}
    rows = []

    def run(name: str) -> float:
        if name not in trained:
            logger.info(f"Ablation: training {name}")
            trained[name] = _train_variant(dict(base, **variants[name]), dataset,
                                           os.path.join(args.out, name), args.iterations)
        return trained[name]

    for mode in modes:
        if mode == "k-sweep":
            continue
        source = "full" if mode == "no-islm-render" else mode
        seconds = run(source)
        ckpt = load_checkpoint(os.path.join(args.out, source))
        summary = summarize(evaluate_checkpoint(ckpt, dataset, render_scattering=render_with.get(mode)))
        rows.append({"mode": mode, "K": ckpt.config["scatter_paths"], "psnr": summary["psnr"],
                     "ssim": summary["ssim"], "lpips": summary["lpips"],
                     "mirror_psnr": summary["mirror_psnr"], "rod_psnr": summary["rod_psnr"],
                     "train_seconds": seconds})

    if rows:
        table = pd.DataFrame(rows, columns=["mode", "K", "psnr", "ssim", "lpips", "mirror_psnr",
                                            "rod_psnr", "train_seconds"])
        table.to_csv(os.path.join(args.out, "ablation.csv"), index=False)
        print(table.to_string(index=False))

    if "k-sweep" in modes:
        sweep = []
        for k in args.k_values:
            name = f"k{k}"
            seconds = _train_variant(dict(base, scatter_paths=k), dataset, os.path.join(args.out, name),
                                     args.iterations)
            summary = summarize(evaluate_checkpoint(load_checkpoint(os.path.join(args.out, name)), dataset))
            sweep.append({"K": k, "psnr": summary["psnr"], "train_seconds": seconds})
        table = pd.DataFrame(sweep, columns=["K", "psnr", "train_seconds"])
        table.to_csv(os.path.join(args.out, "k_sweep.csv"), index=False)
        print(table.to_string(index=False))

    return 0


# ---------------------------------------------------------------------------
# Entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isnerf", description="Scattering-aware deblurring radiance fields")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--log-file", default=None, help="Also log to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="Generate a synthetic blurred dataset")
    synth.add_argument("--scene", default="desk", help="Scene JSON file or 'desk'")
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int)
    synth.add_argument("--size", type=parse_size, help="WxH")
    synth.add_argument("--views", type=int)
    synth.add_argument("--n", type=int, help="Virtual images per exposure")
    synth.add_argument("--config")
    synth.add_argument("--preset", choices=sorted(ConfigManager.PRESETS))
    synth.set_defaults(handler=cmd_synth)

    train = sub.add_parser("train", help="Train on a blurred dataset")
    train.add_argument("--data")
    train.add_argument("--config")
    train.add_argument("--preset", choices=sorted(ConfigManager.PRESETS))
    train.add_argument("--out")
    train.add_argument("--iterations", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--dump-config", metavar="PATH", help="Write the full configuration and exit")
    train.add_argument("--gradcheck", type=int, nargs="?", const=200, metavar="COORDS",
                       help="Check gradients against finite differences instead of training")
    train.set_defaults(handler=cmd_train)

    render = sub.add_parser("render", help="Render a view from a checkpoint")
    render.add_argument("--ckpt", required=True)
    render.add_argument("--pose", required=True, help="View index or JSON file with a 4x4 'pose'")
    render.add_argument("--out", required=True)
    render.add_argument("--no-islm", action="store_true", help="Render without the scattering term")
    render.add_argument("--seed", type=int)
    render.set_defaults(handler=cmd_render)

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint on held-out sharp views")
    evaluate.add_argument("--ckpt", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--out", help="CSV path (default <ckpt>/eval.csv)")
    evaluate.add_argument("--gt-poses", action="store_true", help="Render at ground-truth midpoints")
    evaluate.add_argument("--no-islm", action="store_true")
    evaluate.add_argument("--seed", type=int)
    evaluate.set_defaults(handler=cmd_eval)

    ablate = sub.add_parser("ablate", help="Train and compare ablation variants")
    ablate.add_argument("--data", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--modes", default=",".join(ABLATION_MODES))
    ablate.add_argument("--config")
    ablate.add_argument("--preset", choices=sorted(ConfigManager.PRESETS))
    ablate.add_argument("--iterations", type=int)
    ablate.add_argument("--seed", type=int)
    ablate.add_argument("--k-values", type=lambda s: [int(k) for k in s.split(",")], default=list(K_SWEEP))
    ablate.set_defaults(handler=cmd_ablate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    configure_logging(args)

    try:
        return args.handler(args)
    except (IsNerfError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
