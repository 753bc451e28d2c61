"""Two-stage training orchestration and the end-to-end generation pipeline.

Stage 1 trains the frame forecaster against the image critic on random
time jumps; stage 2 freezes it, rolls coarse clips, and trains the
refiner against both critics.  All runs are deterministic given
(config, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ._tensor import state_to_arrays
from .conditions import (ForecasterCheckpoint, PoseSequence, forecast_poses,
                         render_heatmaps_array, render_sequence)
from .config import TrainConfig
from .corpus import DatasetManifest
from .forecaster import GMArchitecture, GMCheckpoint
from .losses import (CriticArchitecture, CriticCheckpoint, LossReport,
                     feature_similarity, generator_adversarial_loss, mae_loss,
                     refine_adversarial_loss, sparsity_loss,
                     toy_feature_extractors, wasserstein_critic_loss)
from .metrics import RandomConvEmbedder, acd_content, acd_identity, mse, psnr
from .refiner import GRArchitecture, GRCheckpoint, refine_clip
from .residual import Frame, MotionMapSequence, VideoClip, load_clip

__all__ = [
    "TrainConfig", "sample_time_jump", "train_stage1", "train_stage2",
    "generate_video", "generate_detailed", "GenerationResult",
    "evaluate_split", "save_loss_history", "load_loss_history",
    "default_gm_architecture", "default_gr_architecture",
    "default_image_critic", "default_video_critic", "load_split_tensors",
]

_PROBE_SALT = 7919
_GP_SALT = 104729


def _f(x) -> float:
    """Tensor or number to plain float, detached from any graph."""
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def sample_time_jump(clip_len: int, k_max: int, rng: np.random.Generator):
    """Random (t, k): k uniform on [1, k_max], t uniform over starts with
    t + k < clip_len."""
    if k_max < 1 or clip_len <= k_max:
        raise ValueError(f"need clip_len > k_max >= 1, got {clip_len}, {k_max}")
    k = int(rng.integers(1, k_max + 1))
    t = int(rng.integers(0, clip_len - k))
    return t, k


def _pow2_stages(dims, floor: int, cap: int) -> int:
    s = 0
    while s < cap and all(d % 2 ** (s + 1) == 0 and d // 2 ** (s + 1) >= floor
                          for d in dims):
        s += 1
    return s


def default_gm_architecture(manifest: DatasetManifest, dense: bool = True) -> GMArchitecture:
    stages = max(1, _pow2_stages((manifest.height, manifest.width), floor=4, cap=4))
    return GMArchitecture(
        height=manifest.height, width=manifest.width, frame_channels=3,
        cond_channels=manifest.joints, base_width=8, stages=stages,
        block_width=12, dense=dense,
    )


def default_gr_architecture(manifest: DatasetManifest, clip_k: int) -> GRArchitecture:
    stages = max(1, _pow2_stages((clip_k, manifest.height, manifest.width),
                                 floor=1, cap=2))
    return GRArchitecture(
        clip_len=clip_k, height=manifest.height, width=manifest.width,
        frame_channels=3, cond_channels=manifest.joints, base_width=12,
        stages=stages,
    )


def default_image_critic(manifest: DatasetManifest) -> CriticArchitecture:
    stages = max(1, _pow2_stages((manifest.height, manifest.width), floor=2, cap=4))
    return CriticArchitecture(
        kind="image", in_channels=3 + manifest.joints, height=manifest.height,
        width=manifest.width, base_width=16, stages=stages,
    )


def default_video_critic(manifest: DatasetManifest, clip_k: int) -> CriticArchitecture:
    stages = max(1, _pow2_stages((clip_k, manifest.height, manifest.width),
                                 floor=1, cap=3))
    return CriticArchitecture(
        kind="video", in_channels=3 + manifest.joints, height=manifest.height,
        width=manifest.width, clip_len=clip_k, base_width=16, stages=stages,
    )


@dataclass
class SplitTensors:
    """One split loaded whole: frames (n, L, C, H, W), maps (n, L, J, H, W)."""

    ids: list
    classes: list
    frames: torch.Tensor
    maps: torch.Tensor

    @property
    def clip_count(self) -> int:
        return self.frames.shape[0]

    @property
    def clip_len(self) -> int:
        return self.frames.shape[1]


def load_split_tensors(manifest: DatasetManifest, split: str) -> SplitTensors:
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"split {split!r} of the manifest is empty")
    frames, maps, ids, classes = [], [], [], []
    for e in entries:
        clip = load_clip(manifest.clip_dir(e))
        frames.append(clip.as_array().transpose(0, 3, 1, 2))
        kp = manifest.load_keypoints(e)
        maps.append(np.stack([
            render_heatmaps_array(f[:, :2], f[:, 2] > 0.5, manifest.height,
                                  manifest.width, manifest.sigma).transpose(2, 0, 1)
            for f in kp
        ]))
        ids.append(e.clip_id)
        classes.append(e.motion_class)
    return SplitTensors(
        ids=ids, classes=classes,
        frames=torch.from_numpy(np.stack(frames).astype(np.float32)),
        maps=torch.from_numpy(np.stack(maps).astype(np.float32)),
    )


# ---------------------------------------------------------------------------
# Loss history files

def save_loss_history(path, history, append: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(LossReport.FIELDS)
        for rep in history:
            writer.writerow([getattr(rep, f) for f in LossReport.FIELDS])


def load_loss_history(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(LossReport(step=int(row["step"]),
                                  **{k: float(row[k]) for k in LossReport.FIELDS[1:]}))
    return out


# ---------------------------------------------------------------------------
# Stage 1: frame forecaster + image critic

def _stage1_batch(data: SplitTensors, config: TrainConfig, rng):
    n, length = data.clip_count, data.clip_len
    cs, ts, tks = [], [], []
    for _ in range(config.batch):
        c = int(rng.integers(n))
        t, k = sample_time_jump(length, config.k_max, rng)
        cs.append(c)
        ts.append(t)
        tks.append(t + k)
    c = torch.as_tensor(cs)
    t = torch.as_tensor(ts)
    tk = torch.as_tensor(tks)
    return (data.frames[c, t], data.maps[c, t],
            data.frames[c, tk], data.maps[c, tk])


def train_stage1(manifest: DatasetManifest, config: TrainConfig,
                 arch: GMArchitecture | None = None,
                 critic_arch: CriticArchitecture | None = None,
                 init=None, callback=None):
    """Train the frame forecaster; returns (gm, critic, loss history).

    The first history row (step 0) reports losses before any update.
    Passing ``init=(gm, critic)`` resumes from those checkpoints with
    step numbering continuing; optimizer moments start fresh.
    """
    data = load_split_tensors(manifest, "forecaster-train")
    if init is not None:
        gm, critic = init
        arch, critic_arch = gm.arch, critic.arch
    else:
        arch = arch or default_gm_architecture(manifest)
        critic_arch = critic_arch or default_image_critic(manifest)
        gm = GMCheckpoint.initial(arch, config.seed)
        critic = CriticCheckpoint.initial(critic_arch, config.seed + 1)
    start_step = gm.step

    gen_net = gm.build()
    gen_net.train()
    critic_net = critic.build()
    critic_net.train()
    opt_g = torch.optim.Adam(gen_net.parameters(), lr=config.lr,
                             betas=(config.beta1, config.beta2))
    opt_d = torch.optim.Adam(critic_net.parameters(), lr=config.lr,
                             betas=(config.beta1, config.beta2))
    rng = np.random.default_rng([config.seed, start_step])
    gp_gen = torch.Generator().manual_seed(config.seed + start_step + _GP_SALT)
    extractors = (toy_feature_extractors(arch.frame_channels, config.seed)
                  if config.w_feat > 0 else None)

    def gen_losses(fake, mask, real, cond):
        rec = mae_loss(fake, real)
        sp = sparsity_loss(mask)
        adv = generator_adversarial_loss(critic_net, fake, cond)
        if extractors is not None:
            feat = feature_similarity(fake, real, *extractors)
        else:
            feat = fake.new_zeros(())
        total = (config.w_rec * rec + config.w_sparsity * sp
                 + config.w_gen * adv + config.w_feat * feat)
        return rec, sp, adv, feat, total

    history = []
    if start_step == 0:
        probe_rng = np.random.default_rng([config.seed, _PROBE_SALT])
        base, src, real, cond = _stage1_batch(data, config, probe_rng)
        fake, mask, _ = gen_net.compose(base, src, cond)
        rec, sp, adv, feat, _ = gen_losses(fake, mask, real, cond)
        _, gap, gp = wasserstein_critic_loss(
            critic_net, real, fake.detach(), cond, config.lambda_gp,
            torch.Generator().manual_seed(config.seed + _GP_SALT))
        history.append(LossReport.build(0, _f(rec), _f(sp), _f(adv), _f(feat),
                                        _f(gap), _f(gp), config))

    for step in range(start_step + 1, start_step + config.steps + 1):
        fake = mask = real = cond = None
        gap = gp = None
        for i in range(config.ratio):
            base, src, real, cond = _stage1_batch(data, config, rng)
            if i == config.ratio - 1:
                fake, mask, _ = gen_net.compose(base, src, cond)
                fake_d = fake.detach()
            else:
                with torch.no_grad():
                    fake_d = gen_net.compose(base, src, cond)[0]
            d_loss, gap, gp = wasserstein_critic_loss(
                critic_net, real, fake_d, cond, config.lambda_gp, gp_gen)
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            if callback:
                callback("critic", step)
        rec, sp, adv, feat, total = gen_losses(fake, mask, real, cond)
        opt_g.zero_grad()
        total.backward()
        opt_g.step()
        if callback:
            callback("generator", step)
        history.append(LossReport.build(step, _f(rec), _f(sp), _f(adv), _f(feat),
                                        _f(gap), _f(gp), config))

    gm_out = GMCheckpoint(arch, state_to_arrays(gen_net), step=start_step + config.steps)
    critic_out = CriticCheckpoint(critic_arch, state_to_arrays(critic_net),
                                  step=start_step + config.steps)
    return gm_out, critic_out, history


# ---------------------------------------------------------------------------
# Stage 2: clip refiner + both critics

def _stage2_batch(data: SplitTensors, gm_net, config: TrainConfig, rng):
    n, length = data.clip_count, data.clip_len
    k = config.clip_k
    if length < k + 1:
        raise ValueError(f"clips of length {length} cannot hold a window of {k}+1")
    c = torch.as_tensor(rng.integers(n, size=config.batch))
    t0 = torch.as_tensor(rng.integers(length - k, size=config.batch))
    offs = t0[:, None] + torch.arange(1, k + 1)
    real = data.frames[c[:, None], offs].permute(0, 2, 1, 3, 4)
    conds = data.maps[c[:, None], offs].permute(0, 2, 1, 3, 4)
    base = data.frames[c, t0]
    src = data.maps[c, t0]
    nb = config.batch
    with torch.no_grad():
        coarse, _, _ = gm_net.compose(
            base.repeat_interleave(k, dim=0),
            src.repeat_interleave(k, dim=0),
            conds.permute(0, 2, 1, 3, 4).reshape(nb * k, *conds.shape[1:2], *conds.shape[3:]),
        )
    coarse = coarse.reshape(nb, k, *coarse.shape[1:]).permute(0, 2, 1, 3, 4)
    return coarse, real, conds


def _frame_pick(clip: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """(N, C, T, H, W) with per-sample time index -> (N, C, H, W)."""
    n = clip.shape[0]
    return clip[torch.arange(n), :, idx]


def train_stage2(manifest: DatasetManifest, gm: GMCheckpoint, config: TrainConfig,
                 arch: GRArchitecture | None = None,
                 image_critic_arch: CriticArchitecture | None = None,
                 video_critic_arch: CriticArchitecture | None = None,
                 init=None, callback=None):
    """Train the refiner over coarse clips from the frozen forecaster.

    Returns (gr, (image critic, video critic), loss history).  Both
    critics update in one phase, then the refiner in the alternating
    phase; the image critic sees one random real/generated frame pair
    per clip.
    """
    if gm is None:
        raise ValueError("stage 2 requires a trained forecaster checkpoint")
    data = load_split_tensors(manifest, "refiner-train")
    gm_net = gm.build()
    gm_net.requires_grad_(False)
    if init is not None:
        gr, d_i, d_v = init
        arch = gr.arch
    else:
        arch = arch or default_gr_architecture(manifest, config.clip_k)
        image_critic_arch = image_critic_arch or default_image_critic(manifest)
        video_critic_arch = video_critic_arch or default_video_critic(manifest, config.clip_k)
        gr = GRCheckpoint.initial(arch, config.seed)
        d_i = CriticCheckpoint.initial(image_critic_arch, config.seed + 1)
        d_v = CriticCheckpoint.initial(video_critic_arch, config.seed + 2)
    if arch.clip_len != config.clip_k:
        raise ValueError("refiner architecture clip length differs from config.clip_k")
    start_step = gr.step

    gr_net = gr.build()
    gr_net.train()
    di_net = d_i.build()
    di_net.train()
    dv_net = d_v.build()
    dv_net.train()
    opt_g = torch.optim.Adam(gr_net.parameters(), lr=config.lr,
                             betas=(config.beta1, config.beta2))
    opt_di = torch.optim.Adam(di_net.parameters(), lr=config.lr,
                              betas=(config.beta1, config.beta2))
    opt_dv = torch.optim.Adam(dv_net.parameters(), lr=config.lr,
                              betas=(config.beta1, config.beta2))
    rng = np.random.default_rng([config.seed, 1, start_step])
    gp_gen = torch.Generator().manual_seed(config.seed + start_step + _GP_SALT + 1)

    def critic_losses(real, refined_d, conds, gen):
        j = torch.as_tensor(rng.integers(config.clip_k, size=real.shape[0]))
        di_loss, gap_i, gp_i = wasserstein_critic_loss(
            di_net, _frame_pick(real, j), _frame_pick(refined_d, j),
            _frame_pick(conds, j), config.lambda_gp, gen)
        dv_loss, gap_v, gp_v = wasserstein_critic_loss(
            dv_net, real, refined_d, conds, config.lambda_gp, gen)
        return di_loss, dv_loss, _f(gap_i + gap_v), _f(gp_i + gp_v)

    def gen_losses(refined, mask, real, conds):
        rec = mae_loss(refined, real)
        sp = sparsity_loss(mask)
        adv = refine_adversarial_loss(dv_net, di_net, refined, conds)
        total = config.w_rec * rec + config.w_sparsity * sp + config.w_gen * adv
        return rec, sp, adv, total

    history = []
    if start_step == 0:
        probe_rng = np.random.default_rng([config.seed, 1, _PROBE_SALT])
        coarse, real, conds = _stage2_batch(data, gm_net, config, probe_rng)
        refined, mask, _ = gr_net.refine(coarse, conds)
        rec, sp, adv, _ = gen_losses(refined, mask, real, conds)
        _, _, gap, gp = critic_losses(
            real, refined.detach(), conds,
            torch.Generator().manual_seed(config.seed + _GP_SALT + 1))
        history.append(LossReport.build(0, _f(rec), _f(sp), _f(adv), 0.0,
                                        gap, gp, config))

    for step in range(start_step + 1, start_step + config.steps + 1):
        refined = mask = real = conds = None
        gap = gp = None
        for i in range(config.ratio):
            coarse, real, conds = _stage2_batch(data, gm_net, config, rng)
            if i == config.ratio - 1:
                refined, mask, _ = gr_net.refine(coarse, conds)
                refined_d = refined.detach()
            else:
                with torch.no_grad():
                    refined_d = gr_net.refine(coarse, conds)[0]
            di_loss, dv_loss, gap, gp = critic_losses(real, refined_d, conds, gp_gen)
            opt_di.zero_grad()
            di_loss.backward()
            opt_di.step()
            opt_dv.zero_grad()
            dv_loss.backward()
            opt_dv.step()
            if callback:
                callback("critic", step)
        rec, sp, adv, total = gen_losses(refined, mask, real, conds)
        opt_g.zero_grad()
        total.backward()
        opt_g.step()
        if callback:
            callback("generator", step)
        history.append(LossReport.build(step, _f(rec), _f(sp), _f(adv), 0.0,
                                        gap, gp, config))

    gr_out = GRCheckpoint(arch, state_to_arrays(gr_net), step=start_step + config.steps)
    d_i_out = CriticCheckpoint(d_i.arch, state_to_arrays(di_net),
                               step=start_step + config.steps)
    d_v_out = CriticCheckpoint(d_v.arch, state_to_arrays(dv_net),
                               step=start_step + config.steps)
    return gr_out, (d_i_out, d_v_out), history


# ---------------------------------------------------------------------------
# Generation pipeline

@dataclass
class GenerationResult:
    coarse: VideoClip
    refined: VideoClip
    poses: PoseSequence
    frame_masks: np.ndarray    # forecaster masks, (steps, H, W, 1)
    refine_masks: np.ndarray   # refiner masks, zero over any unrefined tail


def generate_detailed(first: Frame, pose_history: PoseSequence,
                      gm: GMCheckpoint, gr: GRCheckpoint | None = None,
                      forecaster: ForecasterCheckpoint | None = None,
                      future_poses: PoseSequence | None = None,
                      steps: int = 32, sigma: float = 1.5) -> GenerationResult:
    """Run the full pipeline with intermediate artifacts kept.

    Future conditions come from the forecaster unless ``future_poses``
    supplies ground-truth poses directly.  Each future frame is
    generated independently from the input frame, then refined in
    disjoint windows of the refiner's clip length; a tail shorter than
    one window stays coarse.
    """
    arch = gm.arch
    if (first.height, first.width) != (arch.height, arch.width):
        raise ValueError("input frame dims do not match the forecaster checkpoint")
    if pose_history.joint_count != arch.cond_channels:
        raise ValueError("pose joint count does not match the forecaster checkpoint")
    if gr is not None and (gr.arch.height, gr.arch.width) != (arch.height, arch.width):
        raise ValueError("refiner and forecaster checkpoints disagree on frame dims")
    if future_poses is not None:
        if len(future_poses) < steps:
            raise ValueError(f"need {steps} future poses, got {len(future_poses)}")
        poses = PoseSequence(future_poses.poses[:steps])
    else:
        if forecaster is None:
            raise ValueError("either a forecaster checkpoint or future poses are required")
        poses = forecast_poses(pose_history, steps, forecaster)

    from ._tensor import frame_to_tensor, map_to_tensor

    net = gm.build()
    src_map = render_heatmaps_array(pose_history.poses[-1].joints,
                                    pose_history.poses[-1].visibility,
                                    arch.height, arch.width, sigma)
    conds = render_sequence(poses, arch.height, arch.width, sigma)
    base = frame_to_tensor(first).unsqueeze(0).expand(steps, -1, -1, -1)
    src = torch.from_numpy(src_map.transpose(2, 0, 1)).unsqueeze(0).expand(
        steps, -1, -1, -1)
    dst = torch.stack([map_to_tensor(m) for m in conds.maps])
    with torch.no_grad():
        out, mask, _ = net.compose(base, src, dst)
    coarse = VideoClip.from_array(out.numpy().transpose(0, 2, 3, 1))
    frame_masks = mask.numpy().transpose(0, 2, 3, 1)

    refine_masks = np.zeros_like(frame_masks[:, :, :, :1])
    if gr is None:
        return GenerationResult(coarse, coarse, poses, frame_masks, refine_masks)
    k = gr.arch.clip_len
    refined_frames = list(coarse.frames)
    for w0 in range(0, steps - k + 1, k):
        window = VideoClip(coarse.frames[w0:w0 + k])
        wconds = MotionMapSequence(conds.maps[w0:w0 + k])
        refined, dec = refine_clip(window, wconds, gr)
        refined_frames[w0:w0 + k] = refined.frames
        refine_masks[w0:w0 + k] = dec.mask
    return GenerationResult(coarse, VideoClip(tuple(refined_frames)), poses,
                            frame_masks, refine_masks)


def generate_video(first: Frame, pose_history: PoseSequence, gm: GMCheckpoint,
                   gr: GRCheckpoint | None = None,
                   forecaster: ForecasterCheckpoint | None = None,
                   future_poses: PoseSequence | None = None,
                   steps: int = 32, sigma: float = 1.5) -> VideoClip:
    """Forecast conditions, generate frames, refine; returns the final clip."""
    return generate_detailed(first, pose_history, gm, gr, forecaster,
                             future_poses, steps, sigma).refined


# ---------------------------------------------------------------------------
# Evaluation over a manifest split

def evaluate_split(manifest: DatasetManifest, gm: GMCheckpoint,
                   gr: GRCheckpoint | None = None,
                   forecaster: ForecasterCheckpoint | None = None,
                   use_gt_maps: bool = True, steps: int = 32,
                   split: str = "eval", embedder=None):
    """Generate from each clip's first frame and score against the truth.

    Returns (rows, summary, curves): per-clip metric rows, aggregate
    values, and mean per-timestep PSNR arrays for the coarse and final
    outputs.
    """
    if not use_gt_maps and forecaster is None:
        raise ValueError("evaluation without ground-truth maps needs a forecaster")
    embedder = embedder or RandomConvEmbedder(in_channels=gm.arch.frame_channels)
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"split {split!r} of the manifest is empty")
    rows = []
    coarse_curves, final_curves = [], []
    for e in entries:
        clip = load_clip(manifest.clip_dir(e))
        kp = manifest.load_keypoints(e)
        poses = PoseSequence.from_keypoints(kp)
        if use_gt_maps:
            base_idx = 0
            n = min(steps, e.length - 1)
            history = PoseSequence(poses.poses[:1])
            future = PoseSequence(poses.poses[1:n + 1])
            result = generate_detailed(clip.frames[base_idx], history, gm, gr,
                                       future_poses=future, steps=n,
                                       sigma=manifest.sigma)
        else:
            observe = forecaster.observed_len
            base_idx = observe - 1
            n = min(steps, forecaster.predict_len, e.length - observe)
            history = PoseSequence(poses.poses[:observe])
            result = generate_detailed(clip.frames[base_idx], history, gm, gr,
                                       forecaster=forecaster, steps=n,
                                       sigma=manifest.sigma)
        real = VideoClip(clip.frames[base_idx + 1:base_idx + 1 + n])
        final = result.refined
        rows.append({
            "clip_id": e.clip_id,
            "psnr": float(np.mean([psnr(f, r) for f, r in zip(final.frames, real.frames)])),
            "mse": mse(final, real),
            "acd_i": acd_identity(final, clip.frames[base_idx], embedder),
            "acd_c": acd_content(final, embedder),
            "coarse_mse": mse(result.coarse, real),
            "coarse_psnr": float(np.mean([psnr(f, r) for f, r
                                          in zip(result.coarse.frames, real.frames)])),
        })
        coarse_curves.append([psnr(f, r) for f, r in zip(result.coarse.frames, real.frames)])
        final_curves.append([psnr(f, r) for f, r in zip(final.frames, real.frames)])
    n_common = min(len(c) for c in coarse_curves)
    curves = {
        "coarse": np.mean([c[:n_common] for c in coarse_curves], axis=0),
        "final": np.mean([c[:n_common] for c in final_curves], axis=0),
    }
    summary = {
        "clips": len(rows),
        "psnr": float(np.mean([r["psnr"] for r in rows])),
        "mse": float(np.mean([r["mse"] for r in rows])),
        "acd_i": float(np.mean([r["acd_i"] for r in rows])),
        "acd_c": float(np.mean([r["acd_c"] for r in rows])),
        "coarse_mse": float(np.mean([r["coarse_mse"] for r in rows])),
        "coarse_psnr": float(np.mean([r["coarse_psnr"] for r in rows])),
        "use_gt_maps": use_gt_maps,
    }
    return rows, summary, curves
