"""Core value types (frames, clips, motion maps) and residual composition.

Everything in this module is an immutable numpy-backed value; the
composition operators are pure functions, so all of it is safe to call
concurrently.  Pixels live in [-1, 1] internally; file I/O converts to
8-bit [0, 255].
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class ShapeError(ValueError):
    """Incompatible grid shapes."""


def _as_float_grid(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float32)
    if not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite values")
    out.setflags(write=False)
    return out


def _check_range(arr: np.ndarray, lo: float, hi: float, name: str) -> None:
    if arr.size and (arr.min() < lo or arr.max() > hi):
        raise ValueError(f"{name} values must lie in [{lo}, {hi}]")


@dataclass(frozen=True)
class Frame:
    """A single image, H x W x C float32 in [-1, 1], H and W at least 8."""

    pixels: np.ndarray

    def __post_init__(self):
        px = _as_float_grid(self.pixels, "frame")
        if px.ndim != 3:
            raise ShapeError(f"frame must have shape (H, W, C), got {px.shape}")
        if px.shape[0] < 8 or px.shape[1] < 8:
            raise ValueError(f"frame spatial dims must be >= 8, got {px.shape[:2]}")
        _check_range(px, -1.0, 1.0, "frame")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class VideoClip:
    """An ordered sequence of frames sharing one geometry."""

    frames: tuple

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("clip must contain at least one frame")
        shape = frames[0].pixels.shape
        for f in frames:
            if not isinstance(f, Frame):
                raise TypeError("clip entries must be Frame values")
            if f.pixels.shape != shape:
                raise ShapeError("all frames in a clip must share one shape")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def clip_length(self) -> int:
        return len(self.frames)

    def as_array(self) -> np.ndarray:
        """Stacked pixels, shape (K, H, W, C)."""
        return np.stack([f.pixels for f in self.frames])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "VideoClip":
        return cls(tuple(Frame(a) for a in np.asarray(arr)))


@dataclass(frozen=True)
class MotionMap:
    """Stacked per-joint heatmaps, H x W x J in [0, 1].

    Each channel is either all zero (joint not visible) or peaks at
    exactly 1.
    """

    heatmaps: np.ndarray

    def __post_init__(self):
        hm = _as_float_grid(self.heatmaps, "motion map")
        if hm.ndim != 3:
            raise ShapeError(f"motion map must have shape (H, W, J), got {hm.shape}")
        _check_range(hm, 0.0, 1.0, "motion map")
        peaks = hm.max(axis=(0, 1))
        if not np.all((peaks == 0.0) | (peaks == 1.0)):
            raise ValueError("each motion map channel must peak at 1 or be all zero")
        object.__setattr__(self, "heatmaps", hm)

    @property
    def height(self) -> int:
        return self.heatmaps.shape[0]

    @property
    def width(self) -> int:
        return self.heatmaps.shape[1]

    @property
    def joints(self) -> int:
        return self.heatmaps.shape[2]


@dataclass(frozen=True)
class MotionMapSequence:
    """Time-ordered motion maps with uniform geometry."""

    maps: tuple

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise ValueError("sequence must contain at least one motion map")
        shape = maps[0].heatmaps.shape
        for m in maps:
            if not isinstance(m, MotionMap):
                raise TypeError("sequence entries must be MotionMap values")
            if m.heatmaps.shape != shape:
                raise ShapeError("all motion maps in a sequence must share one shape")
        object.__setattr__(self, "maps", maps)

    def __len__(self) -> int:
        return len(self.maps)

    def as_array(self) -> np.ndarray:
        """Stacked heatmaps, shape (K, H, W, J)."""
        return np.stack([m.heatmaps for m in self.maps])


@dataclass(frozen=True)
class ResidualDecomposition:
    """Predicted residual for one frame: gate mask in [0, 1] plus content."""

    mask: np.ndarray      # (H, W, 1)
    content: np.ndarray   # (H, W, C)

    def __post_init__(self):
        m = _as_float_grid(self.mask, "mask")
        c = _as_float_grid(self.content, "content")
        if m.ndim != 3 or m.shape[2] != 1:
            raise ShapeError(f"mask must have shape (H, W, 1), got {m.shape}")
        if c.ndim != 3:
            raise ShapeError(f"content must have shape (H, W, C), got {c.shape}")
        if m.shape[:2] != c.shape[:2]:
            raise ShapeError("mask and content spatial dims must match")
        _check_range(m, 0.0, 1.0, "mask")
        _check_range(c, -1.0, 1.0, "content")
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "content", c)


@dataclass(frozen=True)
class SpatiotemporalResidual:
    """Clip-level residual: per-timestep gate mask and content."""

    mask: np.ndarray      # (K, H, W, 1)
    content: np.ndarray   # (K, H, W, C)

    def __post_init__(self):
        m = _as_float_grid(self.mask, "mask")
        c = _as_float_grid(self.content, "content")
        if m.ndim != 4 or m.shape[3] != 1:
            raise ShapeError(f"mask must have shape (K, H, W, 1), got {m.shape}")
        if c.ndim != 4:
            raise ShapeError(f"content must have shape (K, H, W, C), got {c.shape}")
        if m.shape[:3] != c.shape[:3]:
            raise ShapeError("mask and content must share (K, H, W)")
        _check_range(m, 0.0, 1.0, "mask")
        _check_range(c, -1.0, 1.0, "content")
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "content", c)

    def __len__(self) -> int:
        return self.mask.shape[0]


def blend(mask, content, base):
    """Gated residual blend: mask * content + (1 - mask) * base.

    Elementwise with broadcasting; works on numpy arrays and torch
    tensors alike.
    """
    return mask * content + (1 - mask) * base


def compose_frame(base: Frame, dec: ResidualDecomposition) -> Frame:
    """Blend residual content into a frame where the mask gates it in."""
    if dec.mask.shape[:2] != base.pixels.shape[:2]:
        raise ShapeError(
            f"decomposition {dec.mask.shape[:2]} does not match frame "
            f"{base.pixels.shape[:2]}"
        )
    if dec.content.shape[2] != base.channels:
        raise ShapeError("content channel count does not match frame")
    return Frame(blend(dec.mask, dec.content, base.pixels))


def compose_clip(base: VideoClip, dec: SpatiotemporalResidual) -> VideoClip:
    """Per-timestep residual blend over a whole clip."""
    arr = base.as_array()
    if dec.mask.shape[0] != len(base):
        raise ShapeError(
            f"residual has {dec.mask.shape[0]} timesteps, clip has {len(base)}"
        )
    if dec.mask.shape[1:3] != arr.shape[1:3]:
        raise ShapeError("residual spatial dims do not match clip")
    if dec.content.shape[3] != arr.shape[3]:
        raise ShapeError("content channel count does not match clip")
    return VideoClip.from_array(blend(dec.mask, dec.content, arr))


def compose_difference(base: Frame, delta) -> Frame:
    """Single-map additive baseline: base + delta, clamped to [-1, 1].

    Kept as the ablation baseline the residual (mask, content) split
    replaces.
    """
    d = np.asarray(delta, dtype=np.float32)
    if d.shape != base.pixels.shape:
        raise ShapeError(f"delta shape {d.shape} does not match frame {base.pixels.shape}")
    return Frame(np.clip(base.pixels + d, -1.0, 1.0))


# ---------------------------------------------------------------------------
# 8-bit file I/O

def frame_to_uint8(frame: Frame) -> np.ndarray:
    """[-1, 1] float pixels to [0, 255] uint8."""
    return np.clip(np.rint((frame.pixels + 1.0) * 127.5), 0, 255).astype(np.uint8)


def frame_from_uint8(arr: np.ndarray) -> Frame:
    a = np.asarray(arr, dtype=np.float32)
    return Frame(a / 127.5 - 1.0)


def save_frame(frame: Frame, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(frame_to_uint8(frame)).save(tmp, format="PNG")
    tmp.replace(path)


def load_frame(path) -> Frame:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return frame_from_uint8(arr)


_FRAME_FILE = re.compile(r"frame_(\d{4,})\.png$")


def frame_filename(index: int) -> str:
    return f"frame_{index:04d}.png"


def save_clip(clip: VideoClip, directory) -> None:
    """Write a clip as numbered frame_0000.png ... files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        save_frame(frame, directory / frame_filename(i))


def load_clip(directory) -> VideoClip:
    directory = Path(directory)
    entries = sorted(
        (int(m.group(1)), p)
        for p in directory.iterdir()
        if (m := _FRAME_FILE.match(p.name))
    )
    if not entries:
        raise FileNotFoundError(f"no frame_NNNN.png files in {directory}")
    return VideoClip(tuple(load_frame(p) for _, p in entries))
