"""Structure conditions: poses, Gaussian heatmap rendering, and the
recurrent pose forecaster that drives generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt_io
from ._tensor import init_parameters, load_arrays, state_to_arrays
from .config import TrainConfig
from .corpus import DatasetManifest
from .residual import MotionMap, ShapeError


@dataclass(frozen=True)
class Pose:
    """2D joint positions in normalized [0, 1] coordinates plus visibility."""

    joints: np.ndarray      # (J, 2) float
    visibility: np.ndarray  # (J,) bool

    def __post_init__(self):
        xy = np.asarray(self.joints, dtype=np.float64)
        vis = np.asarray(self.visibility, dtype=bool)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ShapeError(f"joints must have shape (J, 2), got {xy.shape}")
        if vis.shape != (xy.shape[0],):
            raise ShapeError("visibility must have one flag per joint")
        shown = xy[vis]
        if shown.size and (shown.min() < 0.0 or shown.max() > 1.0):
            raise ValueError("visible joint coordinates must lie in [0, 1]")
        xy.setflags(write=False)
        vis.setflags(write=False)
        object.__setattr__(self, "joints", xy)
        object.__setattr__(self, "visibility", vis)

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]

    @classmethod
    def all_visible(cls, joints) -> "Pose":
        xy = np.asarray(joints, dtype=np.float64)
        return cls(xy, np.ones(xy.shape[0], dtype=bool))


@dataclass(frozen=True)
class PoseSequence:
    """Time-ordered poses with uniform joint count; may be empty."""

    poses: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        j = poses[0].joint_count if poses else 0
        for p in poses:
            if not isinstance(p, Pose):
                raise TypeError("sequence entries must be Pose values")
            if p.joint_count != j:
                raise ShapeError("all poses in a sequence must share J")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def joint_count(self) -> int:
        return self.poses[0].joint_count if self.poses else 0

    def as_array(self) -> np.ndarray:
        """Coordinates only, shape (T, J, 2)."""
        if not self.poses:
            return np.zeros((0, 0, 2))
        return np.stack([p.joints for p in self.poses])

    @classmethod
    def from_keypoints(cls, kp: np.ndarray) -> "PoseSequence":
        """Build from an (T, J, 3) array of (x, y, visible) rows."""
        kp = np.asarray(kp, dtype=np.float64)
        return cls(tuple(Pose(f[:, :2], f[:, 2] > 0.5) for f in kp))


def render_heatmaps_array(xy: np.ndarray, visibility: np.ndarray,
                          height: int, width: int, sigma: float) -> np.ndarray:
    """Gaussian bump per joint, peak-normalized to 1.0; (H, W, J) float32.

    Joint (x, y) in [0, 1] maps to pixel (x*(W-1), y*(H-1)); hidden
    joints produce all-zero channels.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    joints = xy.shape[0]
    ys = np.arange(height, dtype=np.float64)[:, None]
    xs = np.arange(width, dtype=np.float64)[None, :]
    out = np.zeros((height, width, joints), dtype=np.float32)
    for j in range(joints):
        if not visibility[j]:
            continue
        cx = xy[j, 0] * (width - 1)
        cy = xy[j, 1] * (height - 1)
        g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
        out[:, :, j] = (g / g.max()).astype(np.float32)
    return out


def render_heatmaps(pose: Pose, height: int, width: int, sigma: float = 1.5) -> MotionMap:
    """Render one pose into a stacked-heatmap motion condition."""
    return MotionMap(render_heatmaps_array(pose.joints, pose.visibility,
                                           height, width, sigma))


def render_sequence(poses: PoseSequence, height: int, width: int, sigma: float = 1.5):
    from .residual import MotionMapSequence

    return MotionMapSequence(tuple(
        render_heatmaps(p, height, width, sigma) for p in poses.poses
    ))


class PoseForecasterNet(nn.Module):
    """LSTM over flattened joint coordinates with a sigmoid position head.

    The history is consumed step by step; futures are rolled out
    autoregressively by feeding each prediction back in.
    """

    def __init__(self, joints: int, hidden_size: int = 64, num_layers: int = 1):
        super().__init__()
        self.joints = joints
        self.lstm = nn.LSTM(2 * joints, hidden_size, num_layers, batch_first=True)
        self.head = nn.Linear(hidden_size, 2 * joints)

    def forward(self, history: torch.Tensor, steps: int) -> torch.Tensor:
        """(N, T, 2J) observed coords -> (N, steps, 2J) predicted coords."""
        if steps == 0:
            return history.new_zeros((history.shape[0], 0, history.shape[2]))
        out, state = self.lstm(history)
        pred = torch.sigmoid(self.head(out[:, -1]))
        preds = [pred]
        for _ in range(steps - 1):
            out, state = self.lstm(pred.unsqueeze(1), state)
            pred = torch.sigmoid(self.head(out[:, -1]))
            preds.append(pred)
        return torch.stack(preds, dim=1)


@dataclass
class ForecasterCheckpoint:
    joints: int
    observed_len: int
    predict_len: int
    hidden_size: int
    num_layers: int
    params: dict
    step: int = 0
    version: int = 1

    KIND = "lstm"

    def __post_init__(self):
        if self.observed_len <= 0 or self.predict_len <= 0:
            raise ValueError("observed and predicted lengths must be positive")

    @classmethod
    def initial(cls, joints: int, observed_len: int, predict_len: int,
                hidden_size: int = 64, num_layers: int = 1,
                seed: int = 0) -> "ForecasterCheckpoint":
        net = PoseForecasterNet(joints, hidden_size, num_layers)
        gen = torch.Generator().manual_seed(seed)
        init_parameters(net, gen)
        return cls(joints, observed_len, predict_len, hidden_size, num_layers,
                   state_to_arrays(net))

    def build(self) -> PoseForecasterNet:
        net = PoseForecasterNet(self.joints, self.hidden_size, self.num_layers)
        load_arrays(net, self.params)
        net.eval()
        return net

    def save(self, path) -> None:
        meta = {
            "joints": self.joints,
            "observed_len": self.observed_len,
            "predict_len": self.predict_len,
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "step": self.step,
            "version": self.version,
        }
        ckpt_io.save_container(path, self.KIND, meta, self.params)

    @classmethod
    def load(cls, path) -> "ForecasterCheckpoint":
        _, meta, arrays = ckpt_io.load_container(path, expect_kind=cls.KIND)
        return cls(meta["joints"], meta["observed_len"], meta["predict_len"],
                   meta["hidden_size"], meta["num_layers"], arrays,
                   step=meta.get("step", 0), version=meta["version"])


def forecast_poses(history: PoseSequence, steps: int,
                   ckpt: ForecasterCheckpoint) -> PoseSequence:
    """Roll the trained forecaster forward for ``steps`` future poses."""
    if len(history) != ckpt.observed_len:
        raise ValueError(
            f"history length {len(history)} != checkpoint observed length "
            f"{ckpt.observed_len}"
        )
    if steps > ckpt.predict_len:
        raise ValueError(f"steps {steps} exceeds checkpoint horizon {ckpt.predict_len}")
    if history.joint_count != ckpt.joints:
        raise ValueError("pose joint count does not match checkpoint")
    if steps == 0:
        return PoseSequence(())
    net = ckpt.build()
    coords = history.as_array().reshape(len(history), -1)
    with torch.no_grad():
        pred = net(torch.from_numpy(coords).float().unsqueeze(0), steps)
    pred = pred.squeeze(0).numpy().astype(np.float64).reshape(steps, ckpt.joints, 2)
    vis = history.poses[-1].visibility
    return PoseSequence(tuple(Pose(np.clip(p, 0.0, 1.0), vis) for p in pred))


def _keypoint_windows(manifest: DatasetManifest, split: str, window: int):
    """All keypoint arrays of a split, ready for window sampling."""
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    tracks = []
    for e in entries:
        kp = manifest.load_keypoints(e)
        if kp.shape[0] < window:
            raise ValueError(
                f"clip {e.clip_id} is too short ({kp.shape[0]}) for an "
                f"observe+predict window of {window}"
            )
        tracks.append(kp[:, :, :2].reshape(kp.shape[0], -1).astype(np.float32))
    return tracks


def train_pose_forecaster(manifest: DatasetManifest, config: TrainConfig,
                          split: str = "forecaster-train",
                          init: ForecasterCheckpoint | None = None) -> tuple:
    """Train the pose LSTM on keypoint windows; returns (checkpoint, losses).

    Minimizes mean squared coordinate error over the autoregressive
    rollout.  Deterministic given config.seed.  ``init`` warm-starts
    from an earlier checkpoint; step numbering continues from it.
    """
    if init is not None:
        ckpt = init
        observe, predict = ckpt.observed_len, ckpt.predict_len
    else:
        observe, predict = config.lstm_observe, config.lstm_predict
        ckpt = ForecasterCheckpoint.initial(
            manifest.joints, observe, predict,
            hidden_size=config.lstm_hidden, seed=config.seed,
        )
    window = observe + predict
    tracks = _keypoint_windows(manifest, split, window)
    net = ckpt.build()
    net.train()
    opt = torch.optim.Adam(net.parameters(), lr=config.lr,
                           betas=(config.beta1, config.beta2))
    rng = np.random.default_rng([config.seed, ckpt.step])
    losses = []
    for _ in range(config.steps):
        obs = np.empty((config.batch, observe, tracks[0].shape[1]), dtype=np.float32)
        tgt = np.empty((config.batch, predict, tracks[0].shape[1]), dtype=np.float32)
        for b in range(config.batch):
            track = tracks[rng.integers(len(tracks))]
            start = rng.integers(track.shape[0] - window + 1)
            obs[b] = track[start:start + observe]
            tgt[b] = track[start + observe:start + window]
        pred = net(torch.from_numpy(obs), predict)
        loss = torch.mean((pred - torch.from_numpy(tgt)) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    ckpt = ForecasterCheckpoint(
        ckpt.joints, observe, predict, ckpt.hidden_size, ckpt.num_layers,
        state_to_arrays(net), step=ckpt.step + config.steps,
    )
    return ckpt, losses


def freeze_last_pose_mse(manifest: DatasetManifest, observe: int, predict: int,
                         split: str = "eval") -> dict:
    """Coordinate MSE of the copy-last-pose baseline, keyed by motion class."""
    per_class = {}
    for e in manifest.split(split):
        kp = manifest.load_keypoints(e)[:, :, :2]
        err = []
        for start in range(0, kp.shape[0] - observe - predict + 1):
            frozen = kp[start + observe - 1]
            target = kp[start + observe:start + observe + predict]
            err.append(np.mean((target - frozen) ** 2))
        per_class.setdefault(e.motion_class, []).append(float(np.mean(err)))
    return {c: float(np.mean(v)) for c, v in per_class.items()}


def forecaster_mse(manifest: DatasetManifest, ckpt: ForecasterCheckpoint,
                   split: str = "eval") -> dict:
    """Held-out coordinate MSE of the trained forecaster, keyed by class."""
    net = ckpt.build()
    observe, predict = ckpt.observed_len, ckpt.predict_len
    per_class = {}
    for e in manifest.split(split):
        kp = manifest.load_keypoints(e)[:, :, :2].astype(np.float32)
        track = kp.reshape(kp.shape[0], -1)
        err = []
        for start in range(0, kp.shape[0] - observe - predict + 1):
            obs = torch.from_numpy(track[start:start + observe]).unsqueeze(0)
            with torch.no_grad():
                pred = net(obs, predict).squeeze(0).numpy()
            target = track[start + observe:start + observe + predict]
            err.append(float(np.mean((pred - target) ** 2)))
        per_class.setdefault(e.motion_class, []).append(float(np.mean(err)))
    return {c: float(np.mean(v)) for c, v in per_class.items()}
