"""Frame forecasting network: motion/image encoders, structure-analogy
embedding, and a densely connected residual decoder.

A future frame is produced by shifting the encoded input image along
the encoded structure difference (target minus source condition) and
decoding that embedding into a (mask, content) residual pair.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint as ckpt_io
from ._tensor import (frame_to_tensor, init_parameters, load_arrays,
                      map_to_tensor, state_to_arrays, tensor_to_frame)
from .residual import (Frame, MotionMap, ResidualDecomposition, ShapeError,
                       blend)


def stage_widths(base: int, stages: int, cap: int = 8) -> tuple:
    """Channel widths for the stem plus each downsampling stage."""
    return tuple(base * min(2 ** i, cap) for i in range(stages + 1))


@dataclass(frozen=True)
class GMArchitecture:
    height: int = 64
    width: int = 64
    frame_channels: int = 3
    cond_channels: int = 8
    base_width: int = 8
    stages: int = 4
    block_width: int = 12
    dense: bool = True

    def __post_init__(self):
        factor = 2 ** self.stages
        if self.height % factor or self.width % factor:
            raise ValueError(
                f"{self.height}x{self.width} not divisible by 2^{self.stages}"
            )
        if self.height // factor < 1 or self.width // factor < 1:
            raise ValueError("too many stages for this resolution")

    @property
    def widths(self) -> tuple:
        return stage_widths(self.base_width, self.stages)

    @property
    def bottleneck_shape(self) -> tuple:
        f = 2 ** self.stages
        return (self.widths[-1], self.height // f, self.width // f)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GMArchitecture":
        return cls(**d)


class ConvEncoder(nn.Module):
    """Stem conv plus stride-2 stages; keeps every pre-bottleneck feature
    as a skip output."""

    def __init__(self, in_channels: int, widths):
        super().__init__()
        self.stem = nn.Conv2d(in_channels, widths[0], 3, padding=1)
        self.downs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 4, stride=2, padding=1)
            for i in range(len(widths) - 1)
        )

    def forward(self, x):
        h = F.relu(self.stem(x))
        skips = [h]
        for down in self.downs:
            h = F.relu(down(h))
            skips.append(h)
        return skips.pop(), skips  # bottleneck, [stem, ...] high-to-low res


class DenseBlock(nn.Module):
    """Two 3x3 convolutions; the first absorbs every incoming source."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = width
        self.conv1 = nn.Conv2d(in_channels, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        return F.relu(self.conv2(F.relu(self.conv1(x))))


class DenseDecoder(nn.Module):
    """Residual decoder with dense cross-block connections.

    Block b (1-indexed) runs at 2^b times the bottleneck resolution and,
    in dense mode, receives the projected bottleneck plus the outputs of
    all b-1 earlier blocks, every source nearest-upsampled to the
    block's own resolution; the matching encoder skip is concatenated
    alongside.  With dense=False only the previous block's output (or
    the bottleneck for block 1) is kept, which is the plain decoder the
    dense wiring is ablated against.
    """

    def __init__(self, bottleneck_channels: int, skip_channels, block_width: int,
                 out_channels: int, dense: bool = True):
        super().__init__()
        self.dense = dense
        self.block_width = block_width
        self.project = nn.Conv2d(bottleneck_channels, block_width, 1)
        blocks = []
        for b in range(len(skip_channels)):
            if dense:
                in_ch = block_width * (1 + b) + skip_channels[b]
            else:
                in_ch = block_width + skip_channels[b]
            blocks.append(DenseBlock(in_ch, block_width))
        self.blocks = nn.ModuleList(blocks)
        self.mask_head = nn.Conv2d(block_width, 1, 3, padding=1)
        self.content_head = nn.Conv2d(block_width, out_channels, 3, padding=1)

    def dense_sources(self, block: int):
        """Dense inputs of 1-indexed ``block``: (name, upsample factor) pairs."""
        if not 1 <= block <= len(self.blocks):
            raise ValueError(f"block must be in 1..{len(self.blocks)}")
        if not self.dense:
            prev = "bottleneck" if block == 1 else f"block{block - 1}"
            return [(prev, 2)]
        sources = [("bottleneck", 2 ** block)]
        sources += [(f"block{j}", 2 ** (block - j)) for j in range(1, block)]
        return sources

    def forward(self, bottleneck, skips):
        p = F.relu(self.project(bottleneck))
        outs = []
        for b, block in enumerate(self.blocks):
            if self.dense:
                parts = [F.interpolate(p, scale_factor=2 ** (b + 1), mode="nearest")]
                parts += [
                    F.interpolate(outs[j], scale_factor=2 ** (b - j), mode="nearest")
                    for j in range(b)
                ]
            else:
                prev = p if b == 0 else outs[-1]
                parts = [F.interpolate(prev, scale_factor=2, mode="nearest")]
            parts.append(skips[-(b + 1)])
            outs.append(block(torch.cat(parts, dim=1)))
        h = outs[-1]
        return torch.sigmoid(self.mask_head(h)), torch.tanh(self.content_head(h))


class MotionForecaster(nn.Module):
    """Full forecasting network over batched tensors (N, C, H, W)."""

    def __init__(self, arch: GMArchitecture):
        super().__init__()
        self.arch = arch
        ws = arch.widths
        self.image_encoder = ConvEncoder(arch.frame_channels, ws)
        self.motion_encoder = ConvEncoder(arch.cond_channels, ws)
        skip_channels = [ws[arch.stages - 1 - b] for b in range(arch.stages)]
        self.decoder = DenseDecoder(ws[-1], skip_channels, arch.block_width,
                                    arch.frame_channels, dense=arch.dense)

    def analogy_embedding(self, frame, cond_src, cond_dst):
        """Decoder input f_M(dst) - f_M(src) + f_I(frame), plus image skips."""
        bottleneck, skips = self.image_encoder(frame)
        src, _ = self.motion_encoder(cond_src)
        dst, _ = self.motion_encoder(cond_dst)
        return dst - src + bottleneck, skips

    def forward(self, frame, cond_src, cond_dst):
        emb, skips = self.analogy_embedding(frame, cond_src, cond_dst)
        return self.decoder(emb, skips)

    def compose(self, frame, cond_src, cond_dst):
        """Returns (future frame, mask, content)."""
        mask, content = self(frame, cond_src, cond_dst)
        return blend(mask, content, frame), mask, content


@dataclass
class GMCheckpoint:
    arch: GMArchitecture
    params: dict
    step: int = 0
    version: int = 1

    KIND = "gm"

    @classmethod
    def initial(cls, arch: GMArchitecture, seed: int = 0) -> "GMCheckpoint":
        net = MotionForecaster(arch)
        init_parameters(net, torch.Generator().manual_seed(seed))
        return cls(arch, state_to_arrays(net))

    def build(self) -> MotionForecaster:
        net = MotionForecaster(self.arch)
        load_arrays(net, self.params)
        net.eval()
        return net

    def save(self, path) -> None:
        meta = {"arch": self.arch.to_dict(), "step": self.step, "version": self.version}
        ckpt_io.save_container(path, self.KIND, meta, self.params)

    @classmethod
    def load(cls, path) -> "GMCheckpoint":
        _, meta, arrays = ckpt_io.load_container(path, expect_kind=cls.KIND)
        return cls(GMArchitecture.from_dict(meta["arch"]), arrays,
                   step=meta.get("step", 0), version=meta["version"])


@dataclass(frozen=True)
class MotionEmbedding:
    """Bottleneck feature grid of the motion encoder, (D, h, w)."""

    features: np.ndarray


@dataclass(frozen=True)
class ImageEmbedding:
    """Image bottleneck plus encoder skip features, highest resolution first."""

    bottleneck: np.ndarray
    skips: tuple


def _check_frame(frame: Frame, arch: GMArchitecture) -> None:
    if (frame.height, frame.width) != (arch.height, arch.width):
        raise ShapeError(
            f"frame is {frame.height}x{frame.width}, checkpoint expects "
            f"{arch.height}x{arch.width}"
        )
    if frame.channels != arch.frame_channels:
        raise ShapeError("frame channel count does not match checkpoint")


def _check_map(mmap: MotionMap, arch: GMArchitecture) -> None:
    if (mmap.height, mmap.width) != (arch.height, arch.width):
        raise ShapeError(
            f"motion map is {mmap.height}x{mmap.width}, checkpoint expects "
            f"{arch.height}x{arch.width}"
        )
    if mmap.joints != arch.cond_channels:
        raise ShapeError("motion map joint count does not match checkpoint")


def encode_motion(mmap: MotionMap, ckpt: GMCheckpoint) -> MotionEmbedding:
    """Bottleneck features of one motion condition."""
    _check_map(mmap, ckpt.arch)
    net = ckpt.build()
    with torch.no_grad():
        bottleneck, _ = net.motion_encoder(map_to_tensor(mmap).unsqueeze(0))
    return MotionEmbedding(bottleneck.squeeze(0).numpy())


def encode_image(frame: Frame, ckpt: GMCheckpoint) -> ImageEmbedding:
    """Bottleneck plus skip features of one input frame."""
    _check_frame(frame, ckpt.arch)
    net = ckpt.build()
    with torch.no_grad():
        bottleneck, skips = net.image_encoder(frame_to_tensor(frame).unsqueeze(0))
    return ImageEmbedding(bottleneck.squeeze(0).numpy(),
                          tuple(s.squeeze(0).numpy() for s in skips))


def analogy_embed(e_src: MotionEmbedding, e_dst: MotionEmbedding,
                  e_img: ImageEmbedding) -> np.ndarray:
    """Elementwise e_dst - e_src + e_img over bottleneck grids."""
    if e_src.features.shape != e_dst.features.shape:
        raise ShapeError("source and target motion embeddings differ in shape")
    if e_img.bottleneck.shape != e_src.features.shape:
        raise ShapeError("image bottleneck shape does not match motion embeddings")
    return e_dst.features - e_src.features + e_img.bottleneck


def decode_residual(embedding: np.ndarray, skips, ckpt: GMCheckpoint) -> ResidualDecomposition:
    """Run the dense decoder on an embedding plus image skip features."""
    net = ckpt.build()
    emb = torch.from_numpy(np.ascontiguousarray(embedding, dtype=np.float32))
    if tuple(emb.shape) != ckpt.arch.bottleneck_shape:
        raise ShapeError(
            f"embedding shape {tuple(emb.shape)} != bottleneck "
            f"{ckpt.arch.bottleneck_shape}"
        )
    skip_ts = [torch.from_numpy(np.ascontiguousarray(s, dtype=np.float32)).unsqueeze(0)
               for s in skips]
    with torch.no_grad():
        mask, content = net.decoder(emb.unsqueeze(0), skip_ts)
    return ResidualDecomposition(
        mask.squeeze(0).numpy().transpose(1, 2, 0),
        content.squeeze(0).numpy().transpose(1, 2, 0),
    )


def forecast_frame(frame: Frame, cond_src: MotionMap, cond_dst: MotionMap,
                   ckpt: GMCheckpoint):
    """Predict the frame under the target condition; returns (frame, residual)."""
    _check_frame(frame, ckpt.arch)
    _check_map(cond_src, ckpt.arch)
    _check_map(cond_dst, ckpt.arch)
    net = ckpt.build()
    with torch.no_grad():
        out, mask, content = net.compose(
            frame_to_tensor(frame).unsqueeze(0),
            map_to_tensor(cond_src).unsqueeze(0),
            map_to_tensor(cond_dst).unsqueeze(0),
        )
    dec = ResidualDecomposition(
        mask.squeeze(0).numpy().transpose(1, 2, 0),
        content.squeeze(0).numpy().transpose(1, 2, 0),
    )
    return tensor_to_frame(out.squeeze(0)), dec
