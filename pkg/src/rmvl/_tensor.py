"""Torch glue shared by the network modules: conversions and seeded init."""

from __future__ import annotations

import numpy as np
import torch

from .residual import Frame, MotionMap, MotionMapSequence, VideoClip


def _as_tensor(arr: np.ndarray) -> torch.Tensor:
    out = np.ascontiguousarray(arr)
    if not out.flags.writeable:  # domain values freeze their buffers
        out = out.copy()
    return torch.from_numpy(out)


def frame_to_tensor(frame: Frame) -> torch.Tensor:
    """(H, W, C) -> float32 tensor (C, H, W)."""
    return _as_tensor(frame.pixels.transpose(2, 0, 1))


def map_to_tensor(mmap: MotionMap) -> torch.Tensor:
    """(H, W, J) -> float32 tensor (J, H, W)."""
    return _as_tensor(mmap.heatmaps.transpose(2, 0, 1))


def clip_to_tensor(clip: VideoClip) -> torch.Tensor:
    """Clip -> float32 tensor (C, K, H, W)."""
    return _as_tensor(clip.as_array().transpose(3, 0, 1, 2))


def maps_to_tensor(seq: MotionMapSequence) -> torch.Tensor:
    """Sequence -> float32 tensor (J, K, H, W)."""
    return _as_tensor(seq.as_array().transpose(3, 0, 1, 2))


def tensor_to_frame(t: torch.Tensor) -> Frame:
    return Frame(t.detach().cpu().numpy().transpose(1, 2, 0))


def tensor_to_clip(t: torch.Tensor) -> VideoClip:
    return VideoClip.from_array(t.detach().cpu().numpy().transpose(1, 2, 3, 0))


def init_parameters(module: torch.nn.Module, generator: torch.Generator) -> None:
    """Seeded He-style init: weights ~ N(0, sqrt(2/fan_in)), biases zero.

    Parameters are visited in named order, so the result is a pure
    function of the module structure and the generator state.
    """
    with torch.no_grad():
        for _, param in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if param.dim() >= 2:
                fan_in = param[0].numel()
                param.normal_(0.0, (2.0 / max(fan_in, 1)) ** 0.5, generator=generator)
            else:
                param.zero_()


def state_to_arrays(module: torch.nn.Module) -> dict:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_arrays(module: torch.nn.Module, arrays: dict) -> None:
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in arrays.items()}
    module.load_state_dict(state)
