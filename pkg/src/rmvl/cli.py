"""Command-line surface: dataset synthesis, training, generation, evaluation.

Exit codes: 0 success, 1 usage error, 2 data or checkpoint error.
``RMVL_HOME`` sets the default run root when --out is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import CheckpointError
from .conditions import (ForecasterCheckpoint, PoseSequence,
                         train_pose_forecaster)
from .config import DatasetConfig, TrainConfig
from .corpus import DatasetManifest, synthesize_dataset
from .forecaster import GMCheckpoint
from .losses import CriticCheckpoint
from .metrics import write_report
from .refiner import GRCheckpoint
from .residual import VideoClip, frame_to_uint8, load_frame, save_clip
from .training import (evaluate_split, generate_detailed, load_loss_history,
                       save_loss_history, train_stage1, train_stage2)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_out(command: str) -> Path:
    root = os.environ.get("RMVL_HOME", "runs")
    return Path(root) / command


def _load_manifest(path) -> DatasetManifest:
    try:
        return DatasetManifest.load(path)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc


def _load_ckpt(cls, path, what: str):
    if path is None:
        raise UsageError(f"missing required {what} checkpoint")
    try:
        return cls.load(path)
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Media helpers

def write_gif(path, clips, duration_ms: int = 125) -> None:
    """Animated GIF of one or more clips placed side by side."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    length = min(len(c) for c in clips)
    frames = [
        Image.fromarray(np.concatenate(
            [frame_to_uint8(c.frames[i]) for c in clips], axis=1))
        for i in range(length)
    ]
    tmp = path.with_name(path.name + ".tmp")
    frames[0].save(tmp, format="GIF", save_all=True, append_images=frames[1:],
                   duration=duration_ms, loop=0)
    tmp.replace(path)


def write_strip(path, clip: VideoClip, stride: int = 4) -> None:
    """Horizontal frame strip sampled every ``stride`` frames."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    picks = [frame_to_uint8(clip.frames[i]) for i in range(0, len(clip), stride)]
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(np.concatenate(picks, axis=1)).save(tmp, format="PNG")
    tmp.replace(path)


def write_mask_images(masks: np.ndarray, directory) -> None:
    """Per-frame masks as 8-bit grayscale PNGs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(masks):
        arr = np.clip(np.rint(m[:, :, 0] * 255.0), 0, 255).astype(np.uint8)
        tmp = directory / f"mask_{i:04d}.png.tmp"
        Image.fromarray(arr, mode="L").save(tmp, format="PNG")
        tmp.replace(directory / f"mask_{i:04d}.png")


def plot_psnr_curves(path, curves: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    steps = np.arange(1, len(curves["coarse"]) + 1)
    ax.plot(steps, curves["coarse"], label="coarse (frame forecaster only)")
    ax.plot(steps, curves["final"], label="final (after refinement)")
    ax.set_xlabel("timestep")
    ax.set_ylabel("PSNR (dB)")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format="png")
    plt.close(fig)
    tmp.replace(path)


def _read_pose_file(path, joints: int | None = None) -> PoseSequence:
    try:
        data = json.loads(Path(path).read_text())
        kp = np.asarray(data["frames"], dtype=np.float64)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read pose file {path}: {exc}") from exc
    if kp.ndim != 3 or kp.shape[2] != 3:
        raise DataError(f"pose file {path} must hold (T, J, 3) keypoints")
    if joints is not None and kp.shape[1] != joints:
        raise DataError(f"pose file has {kp.shape[1]} joints, expected {joints}")
    return PoseSequence.from_keypoints(kp)


# ---------------------------------------------------------------------------
# Commands

def cmd_datagen(args) -> int:
    try:
        cfg = DatasetConfig.from_file(args.config)
        if args.seed is not None:
            cfg = DatasetConfig(**{**cfg.to_dict(), "seed": args.seed})
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad dataset config: {exc}") from exc
    out = Path(args.out) if args.out else _default_out("dataset")
    try:
        manifest = synthesize_dataset(cfg, out)
    except OSError as exc:
        raise DataError(f"cannot write dataset under {out}: {exc}") from exc
    by_split = {s: len(manifest.split(s)) for s in ("forecaster-train", "refiner-train", "eval")}
    print(f"wrote {len(manifest.clips)} clips of {cfg.frames} frames "
          f"({cfg.height}x{cfg.width}, {cfg.joints} joints, {cfg.classes} classes) "
          f"under {out}")
    print("splits: " + ", ".join(f"{k}={v}" for k, v in by_split.items()))
    return 0


def _train_config(args) -> TrainConfig:
    try:
        cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig()
        if args.seed is not None:
            cfg = TrainConfig(**{**cfg.to_dict(), "seed": args.seed})
        return cfg
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad training config: {exc}") from exc


def cmd_train(args) -> int:
    manifest = _load_manifest(args.manifest)
    config = _train_config(args)
    out = Path(args.out) if args.out else _default_out(f"train-{args.stage}")
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.txt")

    if args.stage == "lstm":
        init = (_load_ckpt(ForecasterCheckpoint, out / "lstm.rmvl", "pose forecaster")
                if args.resume else None)
        ckpt, losses = train_pose_forecaster(manifest, config, init=init)
        ckpt.save(out / "lstm.rmvl")
        start = ckpt.step - config.steps
        _append_scalar_history(out / "lstm_loss.csv", losses, start, args.resume)
        print(f"pose forecaster: {ckpt.step} steps, checkpoint at {out / 'lstm.rmvl'}")
        return 0

    if args.stage == "gm":
        init = None
        if args.resume:
            init = (_load_ckpt(GMCheckpoint, out / "gm.rmvl", "forecaster"),
                    _load_ckpt(CriticCheckpoint, out / "critic_image.rmvl",
                               "image critic"))
        gm, critic, history = train_stage1(manifest, config, init=init)
        gm.save(out / "gm.rmvl")
        critic.save(out / "critic_image.rmvl")
        save_loss_history(out / "gm_loss.csv", history, append=args.resume)
        print(f"frame forecaster: {gm.step} steps, final rec loss "
              f"{history[-1].rec:.4f}, checkpoint at {out / 'gm.rmvl'}")
        return 0

    if args.stage == "gr":
        if not args.gm:
            raise UsageError("train gr requires --gm with a trained forecaster checkpoint")
        gm = _load_ckpt(GMCheckpoint, args.gm, "forecaster")
        init = None
        if args.resume:
            init = (_load_ckpt(GRCheckpoint, out / "gr.rmvl", "refiner"),
                    _load_ckpt(CriticCheckpoint, out / "critic_image.rmvl",
                               "image critic"),
                    _load_ckpt(CriticCheckpoint, out / "critic_video.rmvl",
                               "video critic"))
        gr, (d_i, d_v), history = train_stage2(manifest, gm, config, init=init)
        gr.save(out / "gr.rmvl")
        d_i.save(out / "critic_image.rmvl")
        d_v.save(out / "critic_video.rmvl")
        save_loss_history(out / "gr_loss.csv", history, append=args.resume)
        print(f"refiner: {gr.step} steps, final rec loss {history[-1].rec:.4f}, "
              f"checkpoint at {out / 'gr.rmvl'}")
        return 0

    raise UsageError(f"unknown training stage {args.stage!r}")


def _append_scalar_history(path, losses, start_step: int, append: bool) -> None:
    path = Path(path)
    mode = "a" if append and path.exists() else "w"
    with open(path, mode) as fh:
        if mode == "w":
            fh.write("step,mse\n")
        for i, v in enumerate(losses, start=start_step + 1):
            fh.write(f"{i},{v}\n")


def cmd_generate(args) -> int:
    gm = _load_ckpt(GMCheckpoint, args.gm, "forecaster")
    gr = _load_ckpt(GRCheckpoint, args.gr, "refiner") if args.gr else None
    try:
        first = load_frame(args.frame)
    except OSError as exc:
        raise DataError(f"cannot read input frame {args.frame}: {exc}") from exc
    poses = _read_pose_file(args.poses, gm.arch.cond_channels)
    out = Path(args.out) if args.out else _default_out("generate")

    if args.use_gt_maps:
        if len(poses) < args.steps + 1:
            raise DataError(
                f"--use-gt-maps needs {args.steps + 1} poses (input + future), "
                f"got {len(poses)}")
        history = PoseSequence(poses.poses[:1])
        result = generate_detailed(first, history, gm, gr,
                                   future_poses=PoseSequence(poses.poses[1:]),
                                   steps=args.steps, sigma=args.sigma)
    else:
        lstm = _load_ckpt(ForecasterCheckpoint, args.lstm, "pose forecaster")
        if len(poses) < lstm.observed_len:
            raise DataError(f"pose history must hold at least {lstm.observed_len} poses")
        history = PoseSequence(poses.poses[-lstm.observed_len:])
        result = generate_detailed(first, history, gm, gr, forecaster=lstm,
                                   steps=args.steps, sigma=args.sigma)

    save_clip(result.coarse, out / "coarse")
    save_clip(result.refined, out / "refined")
    write_mask_images(result.frame_masks, out / "masks")
    write_gif(out / "side_by_side.gif", [result.coarse, result.refined])
    write_strip(out / "strip.png", result.refined)
    print(f"generated {len(result.refined)} frames under {out}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = _load_manifest(args.manifest)
    gm = _load_ckpt(GMCheckpoint, args.gm, "forecaster")
    gr = _load_ckpt(GRCheckpoint, args.gr, "refiner") if args.gr else None
    lstm = (_load_ckpt(ForecasterCheckpoint, args.lstm, "pose forecaster")
            if args.lstm else None)
    if lstm is None and not args.use_gt_maps:
        raise UsageError("evaluate needs --lstm or --use-gt-maps")
    out = Path(args.out) if args.out else _default_out("evaluate")
    try:
        rows, summary, curves = evaluate_split(
            manifest, gm, gr, forecaster=lstm,
            use_gt_maps=args.use_gt_maps, steps=args.steps)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    write_report(out, rows, summary)
    plot_psnr_curves(out / "psnr_curve.png", curves)
    print(f"evaluated {summary['clips']} clips: psnr {summary['psnr']:.2f} dB, "
          f"mse {summary['mse']:.5f}, acd_i {summary['acd_i']:.4f}, "
          f"acd_c {summary['acd_c']:.4f}")
    print(f"report under {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="rmvl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="synthesize the stick-figure corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("stage", choices=("lstm", "gm", "gr"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--gm", help="forecaster checkpoint (required for gr)")
    p.add_argument("--resume", action="store_true",
                   help="continue from checkpoints already in --out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate a clip from one frame")
    p.add_argument("--frame", required=True)
    p.add_argument("--poses", required=True, help="keypoints JSON (T, J, 3)")
    p.add_argument("--gm", required=True)
    p.add_argument("--gr")
    p.add_argument("--lstm")
    p.add_argument("--use-gt-maps", action="store_true")
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--sigma", type=float, default=1.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score checkpoints on the eval split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--gm", required=True)
    p.add_argument("--gr")
    p.add_argument("--lstm")
    p.add_argument("--use-gt-maps", action="store_true")
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
