import numpy as np
import pytest
import torch

from rmvl.conditions import PoseSequence
from rmvl.config import TrainConfig
from rmvl.forecaster import GMCheckpoint, forecast_frame
from rmvl.losses import CriticCheckpoint
from rmvl.refiner import GRCheckpoint, refine_clip
from rmvl.residual import MotionMapSequence, VideoClip, load_clip
from rmvl.training import (default_gm_architecture, default_image_critic,
                           evaluate_split, generate_detailed, generate_video,
                           load_loss_history, load_split_tensors,
                           sample_time_jump, save_loss_history, train_stage1,
                           train_stage2)

SMOKE = dict(batch=2, seed=0, k_max=8, clip_k=8)


def smoke_config(**overrides):
    base = dict(SMOKE)
    base.update(overrides)
    return TrainConfig(**base)


def params_equal(a: dict, b: dict) -> bool:
    return set(a) == set(b) and all(np.array_equal(a[k], b[k]) for k in a)


class TestSampleTimeJump:
    def test_only_valid_pair(self, rng):
        for _ in range(20):
            assert sample_time_jump(2, 1, rng) == (0, 1)

    def test_bounds_always_hold(self, rng):
        for _ in range(500):
            t, k = sample_time_jump(12, 5, rng)
            assert 1 <= k <= 5
            assert t >= 0 and t + k < 12

    def test_rejects_short_clip(self, rng):
        with pytest.raises(ValueError):
            sample_time_jump(5, 5, rng)
        with pytest.raises(ValueError):
            sample_time_jump(5, 0, rng)

    def test_empirical_law_chi_squared(self):
        # k uniform on [1, k_max], then t uniform over the k's valid
        # starts: cell (t, k) has probability 1 / (k_max * (len - k))
        from scipy.stats import chi2

        clip_len, k_max, draws = 8, 4, 100_000
        rng = np.random.default_rng(123)
        counts = {}
        for _ in range(draws):
            tk = sample_time_jump(clip_len, k_max, rng)
            counts[tk] = counts.get(tk, 0) + 1
        cells = [(t, k) for k in range(1, k_max + 1) for t in range(clip_len - k)]
        stat = 0.0
        for cell in cells:
            expected = draws / (k_max * (clip_len - cell[1]))
            stat += (counts.get(cell, 0) - expected) ** 2 / expected
        assert stat < chi2.ppf(0.999, df=len(cells) - 1)

    def test_default_horizon_is_paper_value(self):
        assert TrainConfig().k_max == 32


class TestTrainConfig:
    def test_paper_optimizer_settings_are_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr == pytest.approx(1e-4)
        assert (cfg.beta1, cfg.beta2) == (0.0, 0.9)
        assert cfg.lambda_gp == 10.0

    def test_paper_profile_batch(self):
        assert TrainConfig.paper().batch == 32
        assert TrainConfig.paper().clip_k == 16

    def test_file_round_trip(self, tmp_path):
        cfg = TrainConfig(lr=3e-4, batch=4, steps=7, seed=9, ratio=2)
        cfg.save(tmp_path / "cfg.txt")
        assert TrainConfig.from_file(tmp_path / "cfg.txt") == cfg

    def test_extra_keys_ignored(self, tmp_path):
        (tmp_path / "cfg.txt").write_text("lr = 0.001\nclips = 12\n# comment\n")
        assert TrainConfig.from_file(tmp_path / "cfg.txt").lr == pytest.approx(1e-3)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            TrainConfig(batch=0)


class TestStage1:
    def test_zero_steps_keeps_initialization(self, small_manifest):
        cfg = smoke_config(steps=0)
        gm, critic, history = train_stage1(small_manifest, cfg)
        fresh = GMCheckpoint.initial(default_gm_architecture(small_manifest), cfg.seed)
        assert params_equal(gm.params, fresh.params)
        assert len(history) == 1 and history[0].step == 0

    def test_deterministic_given_seed(self, small_manifest):
        cfg = smoke_config(steps=3)
        gm1, c1, h1 = train_stage1(small_manifest, cfg)
        gm2, c2, h2 = train_stage1(small_manifest, cfg)
        assert params_equal(gm1.params, gm2.params)
        assert params_equal(c1.params, c2.params)
        assert [r.total for r in h1] == [r.total for r in h2]

    def test_history_has_row_per_step_plus_baseline(self, small_manifest):
        _, _, history = train_stage1(small_manifest, smoke_config(steps=4))
        assert [r.step for r in history] == [0, 1, 2, 3, 4]

    def test_zero_lr_leaves_parameters_fixed(self, small_manifest):
        # proves the optimizer consumes the configured learning rate
        cfg = smoke_config(steps=2, lr=1e-30)
        gm, _, _ = train_stage1(small_manifest, cfg)
        fresh = GMCheckpoint.initial(gm.arch, cfg.seed)
        for k in fresh.params:
            assert np.allclose(gm.params[k], fresh.params[k], atol=1e-12)

    def test_strict_alternation(self, small_manifest):
        events = []
        train_stage1(small_manifest, smoke_config(steps=3, ratio=2),
                     callback=lambda phase, step: events.append((phase, step)))
        assert events == [
            ("critic", 1), ("critic", 1), ("generator", 1),
            ("critic", 2), ("critic", 2), ("generator", 2),
            ("critic", 3), ("critic", 3), ("generator", 3),
        ]

    def test_resume_continues_step_numbering(self, small_manifest):
        cfg = smoke_config(steps=3)
        gm, critic, h1 = train_stage1(small_manifest, cfg)
        gm2, critic2, h2 = train_stage1(small_manifest, cfg, init=(gm, critic))
        assert gm.step == 3 and gm2.step == 6
        assert [r.step for r in h2] == [4, 5, 6]

    def test_loss_history_round_trip(self, small_manifest, tmp_path):
        _, _, history = train_stage1(small_manifest, smoke_config(steps=2))
        save_loss_history(tmp_path / "loss.csv", history)
        back = load_loss_history(tmp_path / "loss.csv")
        assert [r.step for r in back] == [r.step for r in history]
        assert back[-1].rec == pytest.approx(history[-1].rec)

    def test_report_total_matches_weights(self, small_manifest):
        cfg = smoke_config(steps=2, w_rec=2.0, w_sparsity=0.5, w_gen=0.1)
        _, _, history = train_stage1(small_manifest, cfg)
        for r in history:
            assert r.total == pytest.approx(
                2.0 * r.rec + 0.5 * r.sparsity + 0.1 * r.gen, abs=1e-9)


@pytest.fixture(scope="module")
def smoke_gm(small_manifest):
    gm, critic, _ = train_stage1(small_manifest, TrainConfig(**SMOKE, steps=3))
    return gm


class TestStage2:
    def test_zero_steps_keeps_initialization(self, small_manifest, smoke_gm):
        cfg = smoke_config(steps=0)
        gr, (d_i, d_v), history = train_stage2(small_manifest, smoke_gm, cfg)
        from rmvl.training import default_gr_architecture

        fresh = GRCheckpoint.initial(
            default_gr_architecture(small_manifest, cfg.clip_k), cfg.seed)
        assert params_equal(gr.params, fresh.params)
        assert len(history) == 1

    def test_requires_forecaster(self, small_manifest):
        with pytest.raises(ValueError):
            train_stage2(small_manifest, None, smoke_config(steps=1))

    def test_forecaster_stays_frozen(self, small_manifest, smoke_gm):
        before = {k: v.copy() for k, v in smoke_gm.params.items()}
        train_stage2(small_manifest, smoke_gm, smoke_config(steps=2))
        assert params_equal(smoke_gm.params, before)

    def test_both_critics_update_then_generator(self, small_manifest, smoke_gm):
        events = []
        train_stage2(small_manifest, smoke_gm, smoke_config(steps=2),
                     callback=lambda phase, step: events.append((phase, step)))
        assert events == [("critic", 1), ("generator", 1),
                          ("critic", 2), ("generator", 2)]

    def test_deterministic(self, small_manifest, smoke_gm):
        cfg = smoke_config(steps=2)
        gr1, _, _ = train_stage2(small_manifest, smoke_gm, cfg)
        gr2, _, _ = train_stage2(small_manifest, smoke_gm, cfg)
        assert params_equal(gr1.params, gr2.params)

    def test_conditioning_sensitivity_after_training(self, small_manifest, smoke_gm, rng):
        gr, _, _ = train_stage2(small_manifest, smoke_gm, smoke_config(steps=3))
        data = load_split_tensors(small_manifest, "eval")
        clip = VideoClip.from_array(
            data.frames[0, :8].numpy().transpose(0, 2, 3, 1))
        from rmvl.residual import MotionMap

        maps = [MotionMap(m) for m in data.maps[0, :8].numpy().transpose(0, 2, 3, 1)]
        ordered, _ = refine_clip(clip, MotionMapSequence(tuple(maps)), gr)
        permuted, _ = refine_clip(clip, MotionMapSequence(tuple(reversed(maps))), gr)
        assert not np.array_equal(ordered.as_array(), permuted.as_array())


class TestGeneration:
    def test_pipeline_equals_manual_composition(self, small_manifest, smoke_gm):
        cfg = smoke_config(steps=2)
        gr, _, _ = train_stage2(small_manifest, smoke_gm, cfg)
        entry = small_manifest.split("eval")[0]
        clip = load_clip(small_manifest.clip_dir(entry))
        poses = PoseSequence.from_keypoints(small_manifest.load_keypoints(entry))
        history = PoseSequence(poses.poses[:1])
        future = PoseSequence(poses.poses[1:17])
        out = generate_video(clip.frames[0], history, smoke_gm, gr,
                             future_poses=future, steps=16,
                             sigma=small_manifest.sigma)
        # oracle: per-frame forecasts concatenated, refined in K windows
        from rmvl.conditions import render_heatmaps

        src = render_heatmaps(history.poses[0], small_manifest.height,
                              small_manifest.width, small_manifest.sigma)
        coarse, conds = [], []
        for pose in future.poses:
            dst = render_heatmaps(pose, small_manifest.height,
                                  small_manifest.width, small_manifest.sigma)
            frame, _ = forecast_frame(clip.frames[0], src, dst, smoke_gm)
            coarse.append(frame)
            conds.append(dst)
        want = []
        for w0 in range(0, 16, cfg.clip_k):
            window = VideoClip(tuple(coarse[w0:w0 + cfg.clip_k]))
            wmaps = MotionMapSequence(tuple(conds[w0:w0 + cfg.clip_k]))
            refined, _ = refine_clip(window, wmaps, gr)
            want.extend(refined.frames)
        assert np.allclose(out.as_array(),
                           VideoClip(tuple(want)).as_array(), atol=1e-5)

    def test_tail_shorter_than_window_stays_coarse(self, small_manifest, smoke_gm):
        gr, _, _ = train_stage2(small_manifest, smoke_gm, smoke_config(steps=1))
        entry = small_manifest.split("eval")[0]
        clip = load_clip(small_manifest.clip_dir(entry))
        poses = PoseSequence.from_keypoints(small_manifest.load_keypoints(entry))
        result = generate_detailed(
            clip.frames[0], PoseSequence(poses.poses[:1]), smoke_gm, gr,
            future_poses=PoseSequence(poses.poses[1:13]), steps=12,
            sigma=small_manifest.sigma)
        # window K=8 refined, frames 8..11 passed through coarse
        assert np.array_equal(result.refined.as_array()[8:],
                              result.coarse.as_array()[8:])
        assert not np.array_equal(result.refined.as_array()[:8],
                                  result.coarse.as_array()[:8])

    def test_requires_forecaster_or_poses(self, small_manifest, smoke_gm):
        entry = small_manifest.split("eval")[0]
        clip = load_clip(small_manifest.clip_dir(entry))
        poses = PoseSequence.from_keypoints(small_manifest.load_keypoints(entry))
        with pytest.raises(ValueError):
            generate_video(clip.frames[0], PoseSequence(poses.poses[:1]),
                           smoke_gm, steps=4)


class TestEvaluateSplit:
    def test_row_per_eval_clip(self, small_manifest, smoke_gm):
        rows, summary, curves = evaluate_split(small_manifest, smoke_gm,
                                               use_gt_maps=True, steps=8)
        assert len(rows) == len(small_manifest.split("eval"))
        assert summary["clips"] == len(rows)
        assert len(curves["coarse"]) == 8

    def test_aggregate_is_mean_of_rows(self, small_manifest, smoke_gm):
        rows, summary, _ = evaluate_split(small_manifest, smoke_gm,
                                          use_gt_maps=True, steps=8)
        assert summary["mse"] == pytest.approx(
            float(np.mean([r["mse"] for r in rows])), rel=1e-9)

    def test_needs_maps_source(self, small_manifest, smoke_gm):
        with pytest.raises(ValueError):
            evaluate_split(small_manifest, smoke_gm, use_gt_maps=False)
