import numpy as np
import pytest
import torch

from rmvl.residual import (Frame, MotionMap, ResidualDecomposition, ShapeError,
                           SpatiotemporalResidual, VideoClip, blend,
                           compose_clip, compose_difference, compose_frame,
                           frame_from_uint8, frame_to_uint8, load_clip,
                           load_frame, save_clip, save_frame)


def random_frame(rng, h=8, w=8, c=3):
    return Frame(rng.uniform(-1, 1, size=(h, w, c)).astype(np.float32))


def random_dec(rng, h=8, w=8, c=3):
    return ResidualDecomposition(
        rng.uniform(0, 1, size=(h, w, 1)).astype(np.float32),
        rng.uniform(-1, 1, size=(h, w, c)).astype(np.float32),
    )


class TestBlend:
    def test_scalar_oracle(self):
        # 0.5 * 0.8 + 0.5 * 0.2 = 0.5
        assert blend(np.array([[0.5]]), np.array([[0.8]]), np.array([[0.2]])) == \
            pytest.approx(0.5)

    def test_zero_mask_keeps_base(self):
        assert blend(np.array([[0.0]]), np.array([[0.8]]), np.array([[0.2]])) == 0.2

    def test_full_mask_takes_content(self):
        assert blend(np.array([[1.0]]), np.array([[0.8]]), np.array([[0.2]])) == 0.8

    def test_works_on_torch_tensors(self):
        out = blend(torch.tensor(0.25), torch.tensor(1.0), torch.tensor(0.0))
        assert float(out) == pytest.approx(0.25)


class TestComposeFrame:
    def test_zero_mask_identity_exact(self, rng):
        base = random_frame(rng)
        dec = ResidualDecomposition(np.zeros((8, 8, 1)), rng.uniform(-1, 1, (8, 8, 3)))
        assert np.array_equal(compose_frame(base, dec).pixels, base.pixels)

    def test_full_mask_returns_content_exact(self, rng):
        base = random_frame(rng)
        content = rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32)
        dec = ResidualDecomposition(np.ones((8, 8, 1)), content)
        assert np.array_equal(compose_frame(base, dec).pixels, content)

    def test_mask_broadcasts_over_channels(self, rng):
        base = random_frame(rng)
        dec = random_dec(rng)
        out = compose_frame(base, dec)
        expected = dec.mask * dec.content + (1 - dec.mask) * base.pixels
        assert np.allclose(out.pixels, expected)

    def test_monotone_in_mask(self, rng):
        # raising the gate moves the output toward the content, per pixel
        base = random_frame(rng)
        content = rng.uniform(-1, 1, (8, 8, 3)).astype(np.float32)
        lo = compose_frame(base, ResidualDecomposition(np.full((8, 8, 1), 0.2), content))
        hi = compose_frame(base, ResidualDecomposition(np.full((8, 8, 1), 0.8), content))
        above = content > base.pixels
        assert np.all(hi.pixels[above] >= lo.pixels[above])
        assert np.all(hi.pixels[~above] <= lo.pixels[~above])

    def test_output_in_range_for_valid_inputs(self, rng):
        for _ in range(50):
            out = compose_frame(random_frame(rng), random_dec(rng))
            assert out.pixels.min() >= -1.0 and out.pixels.max() <= 1.0

    def test_shape_mismatch(self, rng):
        base = random_frame(rng, h=8, w=8)
        with pytest.raises(ShapeError):
            compose_frame(base, random_dec(rng, h=8, w=16))


class TestComposeClip:
    def test_zero_mask_identity(self, rng):
        base = VideoClip(tuple(random_frame(rng) for _ in range(2)))
        dec = SpatiotemporalResidual(np.zeros((2, 8, 8, 1)),
                                     rng.uniform(-1, 1, (2, 8, 8, 3)))
        assert np.array_equal(compose_clip(base, dec).as_array(), base.as_array())

    def test_full_mask_returns_content(self, rng):
        base = VideoClip(tuple(random_frame(rng) for _ in range(2)))
        content = rng.uniform(-1, 1, (2, 8, 8, 3)).astype(np.float32)
        dec = SpatiotemporalResidual(np.ones((2, 8, 8, 1)), content)
        assert np.array_equal(compose_clip(base, dec).as_array(), content)

    def test_matches_frame_by_frame_oracle(self, rng):
        for _ in range(20):
            k = int(rng.integers(1, 5))
            base = VideoClip(tuple(random_frame(rng) for _ in range(k)))
            dec = SpatiotemporalResidual(
                rng.uniform(0, 1, (k, 8, 8, 1)).astype(np.float32),
                rng.uniform(-1, 1, (k, 8, 8, 3)).astype(np.float32),
            )
            out = compose_clip(base, dec)
            for t in range(k):
                per_frame = compose_frame(
                    base.frames[t],
                    ResidualDecomposition(dec.mask[t], dec.content[t]))
                assert np.array_equal(out.frames[t].pixels, per_frame.pixels)

    def test_length_mismatch(self, rng):
        base = VideoClip(tuple(random_frame(rng) for _ in range(3)))
        dec = SpatiotemporalResidual(np.zeros((2, 8, 8, 1)), np.zeros((2, 8, 8, 3)))
        with pytest.raises(ShapeError):
            compose_clip(base, dec)


class TestComposeDifference:
    def test_zero_delta_identity(self, rng):
        base = random_frame(rng)
        assert np.array_equal(compose_difference(base, np.zeros((8, 8, 3))).pixels,
                              base.pixels)

    def test_clamps_at_upper_bound(self):
        base = Frame(np.full((8, 8, 3), 0.9, dtype=np.float32))
        out = compose_difference(base, np.full((8, 8, 3), 0.5))
        assert np.all(out.pixels == 1.0)

    def test_scalar_addition_oracle(self):
        base = Frame(np.full((8, 8, 3), 0.1, dtype=np.float32))
        out = compose_difference(base, np.full((8, 8, 3), -0.3))
        assert np.allclose(out.pixels, -0.2)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            compose_difference(random_frame(rng), np.zeros((4, 4, 3)))


class TestValidation:
    def test_frame_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Frame(np.full((8, 8, 3), 1.5))

    def test_frame_rejects_nan(self):
        px = np.zeros((8, 8, 3))
        px[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Frame(px)

    def test_frame_rejects_tiny_dims(self):
        with pytest.raises(ValueError):
            Frame(np.zeros((4, 8, 3)))

    def test_clip_rejects_mixed_shapes(self, rng):
        with pytest.raises(ShapeError):
            VideoClip((random_frame(rng, 8, 8), random_frame(rng, 8, 16)))

    def test_clip_rejects_empty(self):
        with pytest.raises(ValueError):
            VideoClip(())

    def test_motion_map_peak_rule(self):
        ok = np.zeros((8, 8, 2), dtype=np.float32)
        ok[3, 3, 0] = 1.0
        MotionMap(ok)  # one peaked channel, one all-zero channel
        bad = ok.copy()
        bad[3, 3, 0] = 0.7
        with pytest.raises(ValueError):
            MotionMap(bad)

    def test_decomposition_mask_range(self, rng):
        with pytest.raises(ValueError):
            ResidualDecomposition(np.full((8, 8, 1), 1.2), np.zeros((8, 8, 3)))


class TestFileIO:
    def test_uint8_round_trip_is_lossless_on_grid(self):
        grid = np.arange(256, dtype=np.float32) / 127.5 - 1.0
        px = np.tile(grid[:192].reshape(8, 8, 3), (1, 1, 1))
        f = Frame(px)
        assert np.allclose(frame_from_uint8(frame_to_uint8(f)).pixels, f.pixels,
                           atol=1e-6)

    def test_save_load_frame(self, rng, tmp_path):
        f = random_frame(rng, 16, 12)
        save_frame(f, tmp_path / "f.png")
        back = load_frame(tmp_path / "f.png")
        assert np.allclose(back.pixels, f.pixels, atol=1.0 / 127.5)

    def test_save_load_clip_order(self, rng, tmp_path):
        clip = VideoClip(tuple(random_frame(rng) for _ in range(5)))
        save_clip(clip, tmp_path / "clip")
        back = load_clip(tmp_path / "clip")
        assert len(back) == 5
        assert np.allclose(back.as_array(), clip.as_array(), atol=1.0 / 127.5)

    def test_load_clip_missing(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(FileNotFoundError):
            load_clip(tmp_path / "empty")
