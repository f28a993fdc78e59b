"""Sequence generation: determinism, geometry, formats."""

import struct
from dataclasses import replace

import numpy as np
import pytest

from spgru.data import (
    ANGLE_LEVELS,
    NOISE_LEVELS,
    SPEED_LEVELS,
    SequenceBatch,
    TrajectoryConfig,
    deviation_suite,
    generate,
    glyph_sprite,
    load_dataset,
    load_idx,
    read_pgm,
    save_dataset,
    trajectory_positions,
    write_pgm,
)
from spgru.errors import ConfigError, FormatError

BASE = TrajectoryConfig(frame_size=24, sprite_size=9, seq_len=8, seed=11)


class TestGlyphs:
    def test_all_digits_render(self):
        for d in range(10):
            s = glyph_sprite(d, 12)
            assert s.shape == (12, 12)
            assert 0.0 <= s.min() and s.max() <= 1.0
            assert s.sum() > 1.0  # non-empty stroke

    def test_glyphs_differ(self):
        a, b = glyph_sprite(1, 12), glyph_sprite(8, 12)
        assert np.abs(a - b).sum() > 1.0


class TestGenerate:
    def test_deterministic_bitwise(self):
        a = generate(BASE, 4)
        b = generate(BASE, 4)
        np.testing.assert_array_equal(a.frames, b.frames)

    def test_values_in_unit_interval(self):
        batch = generate(replace(BASE, noise_b=0.4), 3)
        assert batch.frames.min() >= 0.0 and batch.frames.max() <= 1.0

    def test_displacement_example(self):
        # 5% of a 64px frame at 20 degrees
        cfg = TrajectoryConfig(frame_size=64, sprite_size=12, seq_len=3,
                               angle=20.0, speed=0.05, bounce=False,
                               start=(0.2, 0.2), seed=0)
        pos = trajectory_positions(cfg, 20.0, 0.05, (0.2, 0.2))
        step = pos[1] - pos[0]
        np.testing.assert_allclose(step, [3.0070, 1.0945], atol=5e-4)

    def test_zero_speed_static_frames(self):
        batch = generate(replace(BASE, speed=0.0, noise_b=0.0), 2)
        for t in range(1, batch.frames.shape[1]):
            np.testing.assert_array_equal(batch.frames[:, t], batch.frames[:, 0])

    def test_zero_noise_equals_clean_render(self):
        clean = generate(replace(BASE, noise_b=0.0), 2)
        again = generate(replace(BASE, noise_b=0.0), 2)
        np.testing.assert_array_equal(clean.frames, again.frames)

    def test_mass_conservation_bilinear(self):
        # slow drift, no bounce interaction, sprite fully interior
        cfg = TrajectoryConfig(frame_size=32, sprite_size=8, seq_len=6,
                               angle=33.0, speed=0.01, bounce=False,
                               start=(0.5, 0.5), seed=1, glyphs=(5,))
        batch = generate(cfg, 1)
        sums = batch.frames[0].sum(axis=(1, 2))
        np.testing.assert_allclose(sums, sums[0], rtol=1e-6)

    def test_bounce_keeps_positions_in_bounds(self):
        cfg = replace(BASE, speed=0.2, seq_len=50)
        pos = trajectory_positions(cfg, 37.0, 0.2, (0.3, 0.4))
        lo = (cfg.sprite_size - 1) / 2
        hi = cfg.frame_size - 1 - lo
        assert pos.min() >= lo - 1e-9 and pos.max() <= hi + 1e-9

    def test_nearest_interp_is_exact_copy(self):
        cfg = replace(BASE, interp="nearest", speed=0.0, glyphs=(4,),
                      start=(0.5, 0.5))
        batch = generate(cfg, 1)
        sprite = glyph_sprite(4, cfg.sprite_size)
        frame = batch.frames[0, 0]
        assert frame.max() == sprite.max()
        np.testing.assert_allclose(frame.sum(), sprite.sum(), rtol=1e-12)

    def test_sprite_larger_than_frame_rejected(self):
        with pytest.raises(ConfigError):
            generate(replace(BASE, sprite_size=24), 1)

    def test_random_mode_samples_per_sequence(self):
        cfg = replace(BASE, angle=None, speed=None, start=None)
        batch = generate(cfg, 3)
        angles = {m.angles[0] for m in batch.meta}
        assert len(angles) == 3

    def test_multi_digit_max_compose(self):
        cfg = replace(BASE, n_digits=2, start=None)
        batch = generate(cfg, 2)
        assert batch.frames.max() <= 1.0


class TestDeviationSuite:
    def test_angle_levels(self):
        levels = deviation_suite(BASE, "angle", n=3)
        assert [lv.value for lv in levels] == list(ANGLE_LEVELS)
        assert len(levels) == 4  # reference + 3 deviations

    def test_speed_levels(self):
        levels = deviation_suite(BASE, "speed", n=2)
        assert [lv.value for lv in levels] == list(SPEED_LEVELS)
        assert [lv.label for lv in levels] == ["5", "5.5", "6", "6.5"]

    def test_noise_levels(self):
        levels = deviation_suite(BASE, "noise", n=2)
        assert [lv.value for lv in levels] == list(NOISE_LEVELS)

    def test_levels_share_glyph_draws(self):
        levels = deviation_suite(BASE, "angle", n=5)
        ref_glyphs = [m.glyph_ids for m in levels[0].batch.meta]
        for lv in levels[1:]:
            assert [m.glyph_ids for m in lv.batch.meta] == ref_glyphs

    def test_unknown_suite(self):
        with pytest.raises(ConfigError):
            deviation_suite(BASE, "wobble")


class TestIdx:
    def _write_idx_images(self, path, arr):
        with open(path, "wb") as fh:
            fh.write(struct.pack(">IIII", 0x00000803, *arr.shape))
            fh.write(arr.astype(np.uint8).tobytes())

    def _write_idx_labels(self, path, labels):
        with open(path, "wb") as fh:
            fh.write(struct.pack(">II", 0x00000801, len(labels)))
            fh.write(np.asarray(labels, dtype=np.uint8).tobytes())

    def test_well_formed(self, tmp_path):
        arr = np.random.default_rng(0).integers(0, 256, (5, 28, 28))
        p = tmp_path / "img.idx"
        self._write_idx_images(p, arr)
        sprites = load_idx(p)
        assert sprites.shape == (5, 28, 28)
        assert sprites.max() <= 1.0

    def test_label_filter(self, tmp_path):
        arr = np.zeros((4, 6, 6), dtype=np.uint8)
        pi, pl = tmp_path / "img.idx", tmp_path / "lab.idx"
        self._write_idx_images(pi, arr)
        self._write_idx_labels(pl, [0, 1, 1, 2])
        assert load_idx(pi, pl, digits=(1,)).shape[0] == 2

    def test_truncated_file(self, tmp_path):
        arr = np.zeros((3, 4, 4), dtype=np.uint8)
        p = tmp_path / "img.idx"
        self._write_idx_images(p, arr)
        p.write_bytes(p.read_bytes()[:-7])
        with pytest.raises(FormatError, match="offset"):
            load_idx(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "img.idx"
        p.write_bytes(struct.pack(">I", 0xDEAD) + b"\0" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_idx(p)

    def test_empty_selection(self, tmp_path):
        arr = np.zeros((2, 4, 4), dtype=np.uint8)
        pi, pl = tmp_path / "i.idx", tmp_path / "l.idx"
        self._write_idx_images(pi, arr)
        self._write_idx_labels(pl, [3, 4])
        with pytest.raises(ConfigError):
            load_idx(pi, pl, digits=(9,))


class TestContainers:
    def test_dataset_round_trip(self, tmp_path):
        batch = generate(BASE, 3)
        p = tmp_path / "b.dat"
        save_dataset(p, batch)
        loaded = load_dataset(p)
        np.testing.assert_array_equal(loaded.frames, batch.frames)
        assert loaded.meta[0].glyph_ids == batch.meta[0].glyph_ids

    def test_dataset_bytes_stable(self, tmp_path):
        batch = generate(BASE, 2)
        a, b = tmp_path / "a.dat", tmp_path / "b.dat"
        save_dataset(a, batch)
        save_dataset(b, batch)
        assert a.read_bytes() == b.read_bytes()

    def test_dataset_bad_magic(self, tmp_path):
        p = tmp_path / "x.dat"
        p.write_bytes(b"NOTRIGHT" + b"\0" * 40)
        with pytest.raises(FormatError):
            load_dataset(p)

    def test_pgm_round_trip(self, tmp_path):
        img = np.linspace(0, 1, 30).reshape(5, 6)
        p = tmp_path / "x.pgm"
        write_pgm(p, img)
        back = read_pgm(p)
        assert back.shape == (5, 6)
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12

    def test_pgm_header(self, tmp_path):
        p = tmp_path / "x.pgm"
        write_pgm(p, np.zeros((3, 7)))
        assert p.read_bytes().startswith(b"P5\n7 3\n255\n")


class TestSequenceBatch:
    def test_flat_view(self):
        batch = SequenceBatch(np.zeros((2, 3, 4, 5)))
        assert batch.flat.shape == (2, 3, 20)
