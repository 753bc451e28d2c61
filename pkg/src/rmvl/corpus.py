"""Synthetic stick-figure corpus: parametric motion classes, rendering,
and the dataset manifest consumed by the training stages.

Every clip is a star-shaped articulated figure moving over a static
textured background.  Joint trajectories are closed-form functions of
(class parameters, per-clip parameters, time), so tests can re-evaluate
them exactly.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .config import DatasetConfig

SPLITS = ("forecaster-train", "refiner-train", "eval")

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ClassMotion:
    """Parametric motion family for one class."""

    name: str
    drift_speed: float   # root translation per frame, along the clip heading
    osc_amp_x: float     # root oscillation amplitudes
    osc_amp_y: float
    osc_freq: float      # cycles per frame
    osc_phase_y: float   # y-oscillation phase offset against x
    swing_amp: float     # limb swing, radians
    swing_freq: float
    pulse_amp: float     # limb radial pulse, fraction of rest radius


_BASE_CLASSES = (
    ClassMotion("drift", 0.0022, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    ClassMotion("sway", 0.0008, 0.05, 0.0, 1 / 16, 0.0, 0.25, 1 / 16, 0.0),
    ClassMotion("bounce", 0.0008, 0.0, 0.05, 1 / 12, 0.0, 0.0, 1 / 12, 0.15),
    ClassMotion("whirl", 0.0005, 0.03, 0.03, 1 / 20, math.pi / 2, 0.45, 1 / 10, 0.0),
)


def class_motion(class_id: int) -> ClassMotion:
    """Motion family for a class id; ids past the base set speed up."""
    base = _BASE_CLASSES[class_id % len(_BASE_CLASSES)]
    tier = class_id // len(_BASE_CLASSES)
    if tier == 0:
        return base
    speedup = 1.0 + 0.25 * tier
    return ClassMotion(
        f"{base.name}+{tier}", base.drift_speed, base.osc_amp_x, base.osc_amp_y,
        base.osc_freq * speedup, base.osc_phase_y, base.swing_amp,
        base.swing_freq * speedup, base.pulse_amp,
    )


@dataclass(frozen=True)
class ClipMotion:
    """Per-clip draw: where the figure starts and how its cycle is shifted."""

    motion_class: int
    origin: tuple       # (x, y) in [0, 1]
    heading: float      # radians
    phase: float        # radians
    scale: float

    def to_dict(self) -> dict:
        return {
            "motion_class": self.motion_class,
            "origin": list(self.origin),
            "heading": self.heading,
            "phase": self.phase,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClipMotion":
        return cls(int(d["motion_class"]), tuple(d["origin"]), float(d["heading"]),
                   float(d["phase"]), float(d["scale"]))


def pose_at(clip: ClipMotion, joints: int, t: float) -> np.ndarray:
    """Closed-form joint positions at frame t, shape (J, 2), coords in [0, 1].

    Joint 0 is the root; joints 1..J-1 sit on alternating-radius spokes
    around it.  Parameter ranges are chosen so every joint stays well
    inside the unit square for t in [0, 63].
    """
    cm = class_motion(clip.motion_class)
    root = np.array(clip.origin, dtype=np.float64)
    root = root + cm.drift_speed * t * np.array(
        [math.cos(clip.heading), math.sin(clip.heading)]
    )
    root = root + np.array([
        cm.osc_amp_x * math.sin(TWO_PI * cm.osc_freq * t + clip.phase),
        cm.osc_amp_y * math.sin(TWO_PI * cm.osc_freq * t + clip.phase + cm.osc_phase_y),
    ])
    out = np.empty((joints, 2), dtype=np.float64)
    out[0] = root
    for i in range(1, joints):
        spoke = i - 1
        rest_angle = TWO_PI * spoke / (joints - 1)
        rest_radius = 0.16 if spoke % 2 == 0 else 0.10
        side = 1.0 if spoke % 2 == 0 else -1.0
        swing = cm.swing_amp * math.sin(
            TWO_PI * cm.swing_freq * t + clip.phase + 0.7 * spoke
        )
        radius = clip.scale * rest_radius * (
            1.0 + cm.pulse_amp * math.sin(TWO_PI * cm.swing_freq * t + clip.phase)
        )
        angle = rest_angle + side * swing
        out[i] = root + radius * np.array([math.cos(angle), math.sin(angle)])
    return out


def joint_color(i: int, joints: int) -> tuple:
    r, g, b = colorsys.hsv_to_rgb(i / joints, 0.9, 0.95)
    return int(r * 255), int(g * 255), int(b * 255)


def render_background(rng: np.random.Generator, height: int, width: int) -> Image.Image:
    """Static per-clip texture: smooth upscaled low-res noise."""
    coarse = rng.integers(60, 140, size=(6, 6, 3), dtype=np.uint8)
    return Image.fromarray(coarse).resize((width, height), Image.BICUBIC)


def render_pose_frame(background: Image.Image, xy: np.ndarray) -> np.ndarray:
    """Draw the stick figure at normalized joint positions; returns uint8 HxWx3."""
    im = background.copy()
    draw = ImageDraw.Draw(im)
    width, height = im.size
    px = np.stack([xy[:, 0] * (width - 1), xy[:, 1] * (height - 1)], axis=1)
    bone_w = max(1, round(min(height, width) / 32))
    dot_r = max(1, round(min(height, width) / 36))
    joints = xy.shape[0]
    for i in range(1, joints):
        draw.line([tuple(px[0]), tuple(px[i])], fill=(25, 25, 35), width=bone_w)
    for i in range(joints):
        x, y = px[i]
        draw.ellipse([x - dot_r, y - dot_r, x + dot_r, y + dot_r],
                     fill=joint_color(i, joints))
    return np.asarray(im, dtype=np.uint8)


@dataclass(frozen=True)
class ClipEntry:
    clip_id: str
    length: int
    motion_class: int
    split: str
    path: str           # clip directory, relative to the manifest root
    trajectory: ClipMotion

    def to_dict(self) -> dict:
        return {
            "id": self.clip_id,
            "length": self.length,
            "motion_class": self.motion_class,
            "split": self.split,
            "path": self.path,
            "trajectory": self.trajectory.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClipEntry":
        return cls(d["id"], int(d["length"]), int(d["motion_class"]), d["split"],
                   d["path"], ClipMotion.from_dict(d["trajectory"]))


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    height: int
    width: int
    joints: int
    classes: int
    sigma: float
    clip_len: int
    clips: tuple

    def __post_init__(self):
        ids = [c.clip_id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate clip ids in manifest")
        for c in self.clips:
            if c.split not in SPLITS:
                raise ValueError(f"unknown split {c.split!r} for clip {c.clip_id}")

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLITS}")
        return [c for c in self.clips if c.split == name]

    def clip_dir(self, entry: ClipEntry) -> Path:
        return Path(self.root) / entry.path

    def load_keypoints(self, entry: ClipEntry) -> np.ndarray:
        """Per-frame keypoints, shape (L, J, 3) with columns (x, y, visible)."""
        data = json.loads((self.clip_dir(entry) / "keypoints.json").read_text())
        arr = np.asarray(data["frames"], dtype=np.float64)
        if arr.shape != (entry.length, self.joints, 3):
            raise ValueError(
                f"clip {entry.clip_id} keypoints have shape {arr.shape}, "
                f"expected {(entry.length, self.joints, 3)}"
            )
        return arr

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "height": self.height,
            "width": self.width,
            "joints": self.joints,
            "classes": self.classes,
            "sigma": self.sigma,
            "clip_len": self.clip_len,
            "clips": [c.to_dict() for c in self.clips],
        }

    def save(self) -> Path:
        path = Path(self.root) / "manifest.json"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text())
        return cls(
            root=path.parent,
            height=int(d["height"]),
            width=int(d["width"]),
            joints=int(d["joints"]),
            classes=int(d["classes"]),
            sigma=float(d["sigma"]),
            clip_len=int(d["clip_len"]),
            clips=tuple(ClipEntry.from_dict(c) for c in d["clips"]),
        )


def synthesize_dataset(config: DatasetConfig, root) -> DatasetManifest:
    """Render the synthetic corpus under ``root`` and write its manifest.

    Pure function of (config, root contents aside): the same config and
    seed produce byte-identical frames, keypoints, and manifest.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    master = np.random.default_rng(config.seed)
    entries = []
    for i in range(config.clips):
        clip_id = f"clip_{i:04d}"
        motion_class = i % config.classes
        split = SPLITS[(i // config.classes) % len(SPLITS)]
        clip_motion = ClipMotion(
            motion_class=motion_class,
            origin=(float(master.uniform(0.42, 0.58)), float(master.uniform(0.42, 0.58))),
            heading=float(master.uniform(0.0, TWO_PI)),
            phase=float(master.uniform(0.0, TWO_PI)),
            scale=float(master.uniform(0.85, 1.10)),
        )
        rel = f"clips/{clip_id}"
        clip_dir = root / rel
        clip_dir.mkdir(parents=True, exist_ok=True)
        texture_rng = np.random.default_rng([config.seed, i])
        background = render_background(texture_rng, config.height, config.width)
        keypoints = []
        for t in range(config.frames):
            xy = pose_at(clip_motion, config.joints, t)
            frame = render_pose_frame(background, xy)
            tmp = clip_dir / f"frame_{t:04d}.png.tmp"
            Image.fromarray(frame).save(tmp, format="PNG")
            tmp.replace(clip_dir / f"frame_{t:04d}.png")
            keypoints.append([[float(x), float(y), 1.0] for x, y in xy])
        kp_path = clip_dir / "keypoints.json"
        tmp = kp_path.with_name(kp_path.name + ".tmp")
        tmp.write_text(json.dumps(
            {"joints": config.joints, "frames": keypoints}, sort_keys=True
        ))
        tmp.replace(kp_path)
        entries.append(ClipEntry(clip_id, config.frames, motion_class, split,
                                 rel, clip_motion))
    manifest = DatasetManifest(
        root=root, height=config.height, width=config.width, joints=config.joints,
        classes=config.classes, sigma=config.sigma, clip_len=config.frames,
        clips=tuple(entries),
    )
    manifest.save()
    return manifest
