"""Clip refinement network: a spatiotemporal encoder-decoder that predicts
a clip-level residual over coarse frames.

Downsampling and upsampling use strided and fractionally strided 3D
convolutions (no pooling); encoder features are reused through skip
connections.  Frames enter channel-concatenated with their motion maps.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint as ckpt_io
from ._tensor import (clip_to_tensor, init_parameters, load_arrays,
                      maps_to_tensor, state_to_arrays, tensor_to_clip)
from .forecaster import stage_widths
from .residual import (MotionMapSequence, ShapeError, SpatiotemporalResidual,
                       VideoClip, blend)


@dataclass(frozen=True)
class GRArchitecture:
    clip_len: int = 16
    height: int = 64
    width: int = 64
    frame_channels: int = 3
    cond_channels: int = 8
    base_width: int = 12
    stages: int = 2

    def __post_init__(self):
        factor = 2 ** self.stages
        for name, dim in (("clip_len", self.clip_len), ("height", self.height),
                          ("width", self.width)):
            if dim % factor:
                raise ValueError(f"{name}={dim} not divisible by 2^{self.stages}")

    @property
    def widths(self) -> tuple:
        return stage_widths(self.base_width, self.stages, cap=4)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GRArchitecture":
        return cls(**d)


class ClipRefiner(nn.Module):
    """Spatiotemporal U-style refiner over (N, C, T, H, W) tensors."""

    def __init__(self, arch: GRArchitecture):
        super().__init__()
        self.arch = arch
        ws = arch.widths
        in_ch = arch.frame_channels + arch.cond_channels
        self.stem = nn.Conv3d(in_ch, ws[0], 3, padding=1)
        self.downs = nn.ModuleList(
            nn.Conv3d(ws[i], ws[i + 1], 4, stride=2, padding=1)
            for i in range(arch.stages)
        )
        self.mid = nn.Conv3d(ws[-1], ws[-1], 3, padding=1)
        self.ups = nn.ModuleList(
            nn.ConvTranspose3d(ws[i + 1], ws[i], 4, stride=2, padding=1)
            for i in reversed(range(arch.stages))
        )
        self.fuses = nn.ModuleList(
            nn.Conv3d(2 * ws[i], ws[i], 3, padding=1)
            for i in reversed(range(arch.stages))
        )
        self.mask_head = nn.Conv3d(ws[0], 1, 3, padding=1)
        self.content_head = nn.Conv3d(ws[0], arch.frame_channels, 3, padding=1)

    def forward(self, frames, conds):
        h = F.relu(self.stem(torch.cat([frames, conds], dim=1)))
        skips = [h]
        for down in self.downs:
            h = F.relu(down(h))
            skips.append(h)
        skips.pop()
        h = F.relu(self.mid(h))
        for up, fuse in zip(self.ups, self.fuses):
            h = F.relu(up(h))
            h = F.relu(fuse(torch.cat([h, skips.pop()], dim=1)))
        return torch.sigmoid(self.mask_head(h)), torch.tanh(self.content_head(h))

    def refine(self, frames, conds):
        """Returns (refined clip, mask, content)."""
        mask, content = self(frames, conds)
        return blend(mask, content, frames), mask, content


@dataclass
class GRCheckpoint:
    arch: GRArchitecture
    params: dict
    step: int = 0
    version: int = 1

    KIND = "gr"

    @classmethod
    def initial(cls, arch: GRArchitecture, seed: int = 0) -> "GRCheckpoint":
        net = ClipRefiner(arch)
        init_parameters(net, torch.Generator().manual_seed(seed))
        # Start close to the identity: a mostly-closed gate keeps the
        # coarse clip until the refiner has learned where to intervene.
        with torch.no_grad():
            net.mask_head.bias.fill_(-2.0)
        return cls(arch, state_to_arrays(net))

    def build(self) -> ClipRefiner:
        net = ClipRefiner(self.arch)
        load_arrays(net, self.params)
        net.eval()
        return net

    def save(self, path) -> None:
        meta = {"arch": self.arch.to_dict(), "step": self.step, "version": self.version}
        ckpt_io.save_container(path, self.KIND, meta, self.params)

    @classmethod
    def load(cls, path) -> "GRCheckpoint":
        _, meta, arrays = ckpt_io.load_container(path, expect_kind=cls.KIND)
        return cls(GRArchitecture.from_dict(meta["arch"]), arrays,
                   step=meta.get("step", 0), version=meta["version"])


def refine_clip(coarse: VideoClip, conds: MotionMapSequence, ckpt: GRCheckpoint):
    """Refine a coarse clip under its motion conditions.

    Returns (refined clip, spatiotemporal residual).
    """
    arch = ckpt.arch
    if len(coarse) != arch.clip_len:
        raise ValueError(
            f"clip length {len(coarse)} != checkpoint clip length {arch.clip_len}"
        )
    if len(conds) != len(coarse):
        raise ValueError("conditions and clip must have equal length")
    first = coarse.frames[0]
    if (first.height, first.width) != (arch.height, arch.width):
        raise ShapeError(
            f"clip is {first.height}x{first.width}, checkpoint expects "
            f"{arch.height}x{arch.width}"
        )
    if conds.maps[0].joints != arch.cond_channels:
        raise ShapeError("condition joint count does not match checkpoint")
    net = ckpt.build()
    with torch.no_grad():
        out, mask, content = net.refine(
            clip_to_tensor(coarse).unsqueeze(0),
            maps_to_tensor(conds).unsqueeze(0),
        )
    dec = SpatiotemporalResidual(
        mask.squeeze(0).numpy().transpose(1, 2, 3, 0),
        content.squeeze(0).numpy().transpose(1, 2, 3, 0),
    )
    return tensor_to_clip(out.squeeze(0)), dec
