"""Conditional Wasserstein critics and every training loss term.

The scoring networks are unbounded-output critics (no squashing); their
losses carry a gradient penalty computed on an interpolate of real and
fake inputs, with the gradient taken over the full concatenated input
including the condition channels.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint as ckpt_io
from ._tensor import (clip_to_tensor, frame_to_tensor, init_parameters,
                      load_arrays, map_to_tensor, maps_to_tensor,
                      state_to_arrays)
from .forecaster import stage_widths
from .residual import (Frame, MotionMap, MotionMapSequence, ShapeError,
                       VideoClip)


@dataclass(frozen=True)
class LossReport:
    """Named scalar losses for one training step.

    ``total`` is the generator objective: the weighted sum of rec,
    sparsity, gen, and feat under the run's configured weights.
    """

    step: int
    rec: float
    sparsity: float
    gen: float
    critic: float
    gp: float
    feat: float
    total: float

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"loss field {f.name} is not finite: {v}")

    @classmethod
    def build(cls, step, rec, sparsity, gen, feat, critic, gp, weights) -> "LossReport":
        total = (weights.w_rec * rec + weights.w_sparsity * sparsity
                 + weights.w_gen * gen + weights.w_feat * feat)
        return cls(step=step, rec=float(rec), sparsity=float(sparsity),
                   gen=float(gen), critic=float(critic), gp=float(gp),
                   feat=float(feat), total=float(total))

    FIELDS = ("step", "rec", "sparsity", "gen", "critic", "gp", "feat", "total")


# ---------------------------------------------------------------------------
# Critic networks

@dataclass(frozen=True)
class CriticArchitecture:
    kind: str              # "image" or "video"
    in_channels: int       # frame channels + condition channels
    height: int = 64
    width: int = 64
    clip_len: int = 1      # video critics only
    base_width: int = 16
    stages: int = 4
    stub: str = "conv"     # "conv" net or analytic "sum" critic

    def __post_init__(self):
        if self.kind not in ("image", "video"):
            raise ValueError(f"unknown critic kind {self.kind!r}")
        if self.stub not in ("conv", "sum"):
            raise ValueError(f"unknown critic stub {self.stub!r}")
        if self.stub == "sum":
            return
        factor = 2 ** self.stages
        if self.height % factor or self.width % factor:
            raise ValueError(f"{self.height}x{self.width} not divisible by 2^{self.stages}")
        if self.kind == "video" and self.clip_len % factor:
            raise ValueError(f"clip_len={self.clip_len} not divisible by 2^{self.stages}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CriticArchitecture":
        return cls(**d)


class SumCritic(nn.Module):
    """Analytic stub: D(x) = sum of all input elements, per sample."""

    def forward(self, x):
        return x.flatten(1).sum(dim=1)


class ConvCritic(nn.Module):
    """Strided conv stack with a linear scalar head, 2D or 3D."""

    def __init__(self, arch: CriticArchitecture):
        super().__init__()
        conv = nn.Conv3d if arch.kind == "video" else nn.Conv2d
        widths = stage_widths(arch.base_width, arch.stages - 1)
        layers = []
        prev = arch.in_channels
        for w in widths:
            layers.append(conv(prev, w, 4, stride=2, padding=1))
            prev = w
        self.convs = nn.ModuleList(layers)
        factor = 2 ** arch.stages
        cells = (arch.height // factor) * (arch.width // factor)
        if arch.kind == "video":
            cells *= arch.clip_len // factor
        self.head = nn.Linear(prev * cells, 1)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return self.head(x.flatten(1)).squeeze(1)


def build_critic(arch: CriticArchitecture) -> nn.Module:
    return SumCritic() if arch.stub == "sum" else ConvCritic(arch)


@dataclass
class CriticCheckpoint:
    arch: CriticArchitecture
    params: dict
    step: int = 0
    version: int = 1

    KIND = "critic"

    @property
    def kind(self) -> str:
        return self.arch.kind

    @classmethod
    def initial(cls, arch: CriticArchitecture, seed: int = 0) -> "CriticCheckpoint":
        net = build_critic(arch)
        init_parameters(net, torch.Generator().manual_seed(seed))
        return cls(arch, state_to_arrays(net))

    def build(self) -> nn.Module:
        net = build_critic(self.arch)
        load_arrays(net, self.params)
        net.eval()
        return net

    def save(self, path) -> None:
        meta = {"arch": self.arch.to_dict(), "step": self.step, "version": self.version}
        ckpt_io.save_container(path, self.KIND, meta, self.params)

    @classmethod
    def load(cls, path) -> "CriticCheckpoint":
        _, meta, arrays = ckpt_io.load_container(path, expect_kind=cls.KIND)
        return cls(CriticArchitecture.from_dict(meta["arch"]), arrays,
                   step=meta.get("step", 0), version=meta["version"])


def _as_critic_fn(critic):
    if isinstance(critic, CriticCheckpoint):
        return critic.build()
    if callable(critic):
        return critic
    raise TypeError("critic must be a CriticCheckpoint or a callable")


def critic_apply(critic, x, cond=None) -> torch.Tensor:
    """Score a batch, concatenating the condition on channels; returns (N,)."""
    inp = x if cond is None else torch.cat([x, cond], dim=1)
    return _as_critic_fn(critic)(inp).reshape(x.shape[0])


# ---------------------------------------------------------------------------
# Tensor-level loss terms

def mae_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel difference (the reconstruction term)."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def sparsity_loss(mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute mask activation; the mask must already be in [0, 1]."""
    if mask.numel():
        m = mask.detach()
        if float(m.min()) < 0.0 or float(m.max()) > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
    return mask.abs().mean()


def gradient_penalty(critic, real: torch.Tensor, fake: torch.Tensor,
                     cond: torch.Tensor | None = None,
                     generator: torch.Generator | None = None,
                     create_graph: bool = True) -> torch.Tensor:
    """Unit-gradient-norm penalty on a random real/fake interpolate.

    One epsilon per sample; the norm is taken over the gradient of the
    critic score with respect to the concatenated (interpolate,
    condition) input.
    """
    if real.shape != fake.shape:
        raise ShapeError("real and fake batches must share a shape")
    critic_fn = _as_critic_fn(critic)
    n = real.shape[0]
    eps_shape = (n,) + (1,) * (real.dim() - 1)
    eps = torch.rand(eps_shape, generator=generator, dtype=real.dtype)
    mixed = eps * real + (1.0 - eps) * fake
    inp = mixed if cond is None else torch.cat([mixed, cond], dim=1)
    inp = inp.detach().requires_grad_(True)
    scores = critic_fn(inp).reshape(n)
    grads = torch.autograd.grad(scores.sum(), inp, create_graph=create_graph)[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def generator_adversarial_loss(critic, fake, cond=None) -> torch.Tensor:
    """Negated critic score of the generated batch."""
    return -critic_apply(critic, fake, cond).mean()


def wasserstein_critic_loss(critic, real, fake, cond=None, gp_weight: float = 10.0,
                            generator: torch.Generator | None = None):
    """Critic objective: D(fake) - D(real) + gp_weight * penalty.

    Returns (loss, score gap, penalty); the gap negates exactly when
    real and fake are swapped.
    """
    gap = (critic_apply(critic, fake, cond).mean()
           - critic_apply(critic, real, cond).mean())
    gp = gradient_penalty(critic, real, fake, cond, generator)
    return gap + gp_weight * gp, gap, gp


def _clip_frames(clip: torch.Tensor) -> torch.Tensor:
    """(N, C, T, H, W) -> (N*T, C, H, W)."""
    n, c, t, h, w = clip.shape
    return clip.permute(0, 2, 1, 3, 4).reshape(n * t, c, h, w)


def refine_adversarial_loss(video_critic, image_critic, refined, conds) -> torch.Tensor:
    """-D_V(clip) minus the per-frame mean of image-critic scores."""
    video_term = critic_apply(video_critic, refined, conds).mean()
    frame_scores = critic_apply(image_critic, _clip_frames(refined), _clip_frames(conds))
    return -video_term - frame_scores.mean()


def feature_similarity(pred: torch.Tensor, target: torch.Tensor,
                       extractor_a, extractor_b) -> torch.Tensor:
    """Squared feature distance summed over two extractors.

    Extractors map a batch of frames to any fixed-shape feature tensor
    and must return matching shapes for matching inputs.
    """
    total = pred.new_zeros(())
    for extractor in (extractor_a, extractor_b):
        fp, ft = extractor(pred), extractor(target)
        if fp.shape != ft.shape:
            raise ShapeError("feature extractor returned mismatching shapes")
        total = total + ((ft - fp) ** 2).flatten(1).sum(dim=1).mean()
    return total


class RandomConvFeatures(nn.Module):
    """Fixed-seed random strided conv stack, a deterministic stand-in for
    pretrained perceptual extractors. ``pooled`` averages spatially for an
    appearance-style vector; unpooled output keeps the structure layout."""

    def __init__(self, in_channels: int = 3, width: int = 16, depth: int = 2,
                 seed: int = 0, pooled: bool = True):
        super().__init__()
        self.pooled = pooled
        layers = []
        prev = in_channels
        for i in range(depth):
            layers.append(nn.Conv2d(prev, width * (i + 1), 3, stride=2, padding=1))
            prev = width * (i + 1)
        self.convs = nn.ModuleList(layers)
        init_parameters(self, torch.Generator().manual_seed(seed))
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        if self.pooled:
            return x.mean(dim=(2, 3))
        return x.flatten(1)


def toy_feature_extractors(in_channels: int = 3, seed: int = 0):
    """Default (appearance, structure) extractor pair."""
    return (RandomConvFeatures(in_channels, seed=seed, pooled=True),
            RandomConvFeatures(in_channels, seed=seed + 1, depth=3, pooled=False))


# ---------------------------------------------------------------------------
# Typed wrappers over the domain values

def _pixels(x) -> np.ndarray:
    if isinstance(x, Frame):
        return x.pixels
    if isinstance(x, VideoClip):
        return x.as_array()
    return np.asarray(x, dtype=np.float32)


def loss_reconstruction(pred, target) -> float:
    """Mean absolute error between frames or clips."""
    a, b = _pixels(pred), _pixels(target)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def loss_sparsity(mask) -> float:
    """Mean absolute mask activation."""
    m = np.asarray(mask, dtype=np.float64)
    if m.size and (m.min() < 0.0 or m.max() > 1.0):
        raise ValueError("mask values must lie in [0, 1]")
    return float(np.abs(m).mean())


def _check_image_inputs(frame: Frame, cond: MotionMap, arch: CriticArchitecture):
    if arch.kind != "image":
        raise ValueError(f"expected an image critic, got {arch.kind!r}")
    if arch.stub == "sum":
        return
    if (frame.height, frame.width) != (arch.height, arch.width):
        raise ShapeError("frame dims do not match critic architecture")
    if frame.channels + cond.joints != arch.in_channels:
        raise ShapeError("frame+condition channels do not match critic input")


def critic_image(frame: Frame, cond: MotionMap, ckpt: CriticCheckpoint) -> float:
    """Conditional critic score of one frame."""
    _check_image_inputs(frame, cond, ckpt.arch)
    with torch.no_grad():
        score = critic_apply(ckpt, frame_to_tensor(frame).unsqueeze(0),
                             map_to_tensor(cond).unsqueeze(0))
    return float(score)


def critic_video(clip: VideoClip, conds: MotionMapSequence,
                 ckpt: CriticCheckpoint) -> float:
    """Conditional critic score of one clip."""
    if ckpt.arch.kind != "video":
        raise ValueError(f"expected a video critic, got {ckpt.arch.kind!r}")
    if len(clip) != len(conds):
        raise ShapeError("clip and condition sequence lengths differ")
    with torch.no_grad():
        score = critic_apply(ckpt, clip_to_tensor(clip).unsqueeze(0),
                             maps_to_tensor(conds).unsqueeze(0))
    return float(score)


def loss_generator_image(fake: Frame, cond: MotionMap, ckpt: CriticCheckpoint) -> float:
    """Generator adversarial term: negated image-critic score."""
    return -critic_image(fake, cond, ckpt)


def loss_critic_image(real: Frame, fake: Frame, cond: MotionMap,
                      ckpt: CriticCheckpoint, gp_weight: float = 10.0,
                      generator: torch.Generator | None = None) -> float:
    """Image-critic Wasserstein loss with gradient penalty."""
    _check_image_inputs(fake, cond, ckpt.arch)
    loss, _, _ = wasserstein_critic_loss(
        ckpt, frame_to_tensor(real).unsqueeze(0), frame_to_tensor(fake).unsqueeze(0),
        map_to_tensor(cond).unsqueeze(0), gp_weight, generator,
    )
    return float(loss)


def loss_generator_refine(refined: VideoClip, conds: MotionMapSequence,
                          image_ckpt: CriticCheckpoint,
                          video_ckpt: CriticCheckpoint) -> float:
    """Refinement adversarial term: -D_V minus mean per-frame -D_I scores."""
    with torch.no_grad():
        loss = refine_adversarial_loss(
            video_ckpt, image_ckpt,
            clip_to_tensor(refined).unsqueeze(0),
            maps_to_tensor(conds).unsqueeze(0),
        )
    return float(loss)


def loss_critic_video(real: VideoClip, fake: VideoClip, conds: MotionMapSequence,
                      ckpt: CriticCheckpoint, gp_weight: float = 10.0,
                      generator: torch.Generator | None = None) -> float:
    """Video-critic Wasserstein loss with spatiotemporal gradient penalty."""
    if ckpt.arch.kind != "video":
        raise ValueError(f"expected a video critic, got {ckpt.arch.kind!r}")
    loss, _, _ = wasserstein_critic_loss(
        ckpt, clip_to_tensor(real).unsqueeze(0), clip_to_tensor(fake).unsqueeze(0),
        maps_to_tensor(conds).unsqueeze(0), gp_weight, generator,
    )
    return float(loss)


def loss_feature_similarity(pred: Frame, target: Frame, extractor_a, extractor_b) -> float:
    """Squared feature-space distance between two frames."""
    return float(feature_similarity(
        frame_to_tensor(pred).unsqueeze(0), frame_to_tensor(target).unsqueeze(0),
        extractor_a, extractor_b,
    ))
