"""Evaluation metrics: PSNR, MSE, and average content distance with
pluggable frame embedders.

All pixel metrics operate on the [0, 1] scale regardless of the
internal [-1, 1] convention.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ._tensor import frame_to_tensor, init_parameters
from .residual import Frame, ShapeError, VideoClip

PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10


def _unit_pixels(x) -> np.ndarray:
    """Pixels rescaled from [-1, 1] to [0, 1]."""
    if isinstance(x, Frame):
        a = x.pixels
    elif isinstance(x, VideoClip):
        a = x.as_array()
    else:
        a = np.asarray(x, dtype=np.float64)
    return (np.asarray(a, dtype=np.float64) + 1.0) / 2.0


def mse(a, b) -> float:
    """Mean squared difference on [0, 1]-rescaled pixels."""
    pa, pb = _unit_pixels(a), _unit_pixels(b)
    if pa.shape != pb.shape:
        raise ShapeError(f"shape mismatch {pa.shape} vs {pb.shape}")
    return float(np.mean((pa - pb) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for near-zero error."""
    err = mse(a, b)
    if err < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(min(10.0 * math.log10(1.0 / err), PSNR_CAP_DB))


class FlattenEmbedder:
    """Identity-style embedder: the rescaled pixels themselves."""

    tag = "flatten"
    seed = 0

    def embed(self, frame: Frame) -> np.ndarray:
        return _unit_pixels(frame).ravel()


@dataclass
class RandomConvEmbedder:
    """Fixed-seed random strided conv stack with global average pooling.

    A deterministic, architecture-free stand-in for a pretrained face or
    appearance embedding; only relative distances are meaningful.
    """

    seed: int = 0
    dim: int = 128
    in_channels: int = 3

    def __post_init__(self):
        widths = (16, 32, self.dim)
        layers = []
        prev = self.in_channels
        net = nn.ModuleList()
        for w in widths:
            net.append(nn.Conv2d(prev, w, 3, stride=2, padding=1))
            prev = w
        init_parameters(net, torch.Generator().manual_seed(self.seed))
        for p in net.parameters():
            p.requires_grad_(False)
        self._net = net

    @property
    def tag(self) -> str:
        return f"randconv-{self.dim}-seed{self.seed}"

    def embed(self, frame: Frame) -> np.ndarray:
        x = frame_to_tensor(frame).unsqueeze(0)
        with torch.no_grad():
            for conv in self._net:
                x = torch.relu(conv(x))
            vec = x.mean(dim=(2, 3)).squeeze(0)
        return vec.numpy().astype(np.float64)


def acd_identity(video: VideoClip, ref: Frame, embedder) -> float:
    """Mean embedding distance between each frame and a reference frame."""
    ref_vec = embedder.embed(ref)
    dists = [np.linalg.norm(embedder.embed(f) - ref_vec) for f in video.frames]
    return float(np.mean(dists))


def acd_content(video: VideoClip, embedder) -> float:
    """Mean pairwise embedding distance across the clip's frames.

    A single-frame clip has no pairs and scores 0.
    """
    vecs = [embedder.embed(f) for f in video.frames]
    k = len(vecs)
    if k < 2:
        return 0.0
    dists = [np.linalg.norm(vecs[i] - vecs[j])
             for i in range(k) for j in range(i + 1, k)]
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# Evaluation report files

REPORT_COLUMNS = ("clip_id", "psnr", "mse", "acd_i", "acd_c")


def write_report(out_dir, rows: list, summary: dict) -> tuple:
    """Write per-clip rows as CSV and the aggregate summary as JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    tmp = csv_path.with_name(csv_path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in REPORT_COLUMNS})
    tmp.replace(csv_path)
    json_path = out_dir / "summary.json"
    tmp = json_path.with_name(json_path.name + ".tmp")
    tmp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    tmp.replace(json_path)
    return csv_path, json_path
