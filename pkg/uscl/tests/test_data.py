import tempfile
from pathlib import Path

import numpy as np

from uscl.data import (
    CLEAN_TAG,
    CORRUPTED_TAG,
    FrameSet,
    Image,
    SynthConfig,
    VideoClip,
    extract_frame_set,
    frame_step,
    generate_synthetic_corpus,
    load_corpus_from_disk,
    split_by_video,
    write_corpus_to_disk,
)
from uscl.data import _draw_track, _render_frame
from uscl.exceptions import ConfigError, CorpusError
from uscl.rng import Rng

from .test_base import USCLTestCase, random_clip

SMALL = SynthConfig(n_videos=6, frames_per_video=20, image_size=16, seed=3)


class FrameSetTests(USCLTestCase):
    def test_frame_step(self) -> None:
        """floor(fps / 3), but never closer than 6 frames."""
        self.assertEqual(frame_step(23.0), 7)
        self.assertEqual(frame_step(30.0), 10)
        self.assertEqual(frame_step(12.0), 6)
        self.assertEqual(frame_step(30.0, samples_per_second=1.0), 30)

    def test_extract_frame_set(self) -> None:
        """60 frames at 23 fps give K = 9 frames, 7 apart, from index 0."""
        clip = random_clip("a", 60)
        clip = VideoClip("a", 23.0, clip.frames, latent_class=1)
        fs = extract_frame_set(clip)
        self.assertEqual(fs.K, 9)
        self.assertEqual(fs.source_indices, tuple(range(0, 60, 7)))
        self.assertIs(fs.frames[2], clip.frames[14])

    def test_short_video_gives_one_frame(self) -> None:
        """A clip shorter than one stride still yields its first frame."""
        fs = extract_frame_set(random_clip("b", 4))
        self.assertEqual(fs.K, 1)

    def test_empty_video_rejected(self) -> None:
        """A clip without frames has no frame set."""
        with self.assertRaises(CorpusError):
            extract_frame_set(VideoClip("empty", 23.0, ()))

    def test_close_indices_rejected(self) -> None:
        """Frame-set frames must be more than 5 source frames apart."""
        img = Image(np.zeros((8, 8)))
        with self.assertRaises(CorpusError):
            FrameSet("x", (img, img), (0, 5))

    def test_frame_set_has_no_label(self) -> None:
        """Pre-training inputs carry no class information."""
        self.assertFalse(hasattr(extract_frame_set(random_clip("c", 10)), "latent_class"))

    def test_bad_sampling_rate(self) -> None:
        """samples_per_second must be positive."""
        with self.assertRaises(ConfigError):
            frame_step(23.0, samples_per_second=0.0)


class SyntheticCorpusTests(USCLTestCase):
    def test_shape_and_labels(self) -> None:
        """Clips have the configured size, length and round-robin classes."""
        clips = generate_synthetic_corpus(SMALL)
        self.assertEqual(len(clips), 6)
        self.assertEqual([c.latent_class for c in clips], [0, 1, 0, 1, 0, 1])
        for clip in clips:
            self.assertEqual(len(clip), 20)
            self.assertEqual(clip.frames[0].size, (16, 16))
            self.assertEqual(clip.tag, CLEAN_TAG)

    def test_pixels_in_range(self) -> None:
        """Every pixel lies in [0, 1]."""
        for clip in generate_synthetic_corpus(SMALL):
            for frame in clip.frames:
                self.assertGreaterEqual(frame.pixels.min(), 0.0)
                self.assertLessEqual(frame.pixels.max(), 1.0)

    def test_deterministic_and_worker_independent(self) -> None:
        """Same config, same pixels, however many workers render it."""
        a = generate_synthetic_corpus(SMALL)
        b = generate_synthetic_corpus(SMALL, max_workers=3)
        for ca, cb in zip(a, b):
            for fa, fb in zip(ca.frames, cb.frames):
                self.assertArrayEqual(fa.pixels, fb.pixels)

    def test_seed_changes_corpus(self) -> None:
        """A different seed renders different videos."""
        a = generate_synthetic_corpus(SMALL)
        b = generate_synthetic_corpus(SynthConfig(**{**SMALL.__dict__, "seed": 4}))
        self.assertFalse(np.array_equal(a[0].frames[0].pixels, b[0].frames[0].pixels))

    def test_consecutive_frames_are_similar(self) -> None:
        """Frames drift slowly: neighbors are closer than frames of another video."""
        clips = generate_synthetic_corpus(SMALL)
        near = np.abs(clips[0].frames[0].pixels - clips[0].frames[1].pixels).mean()
        far = np.abs(clips[0].frames[0].pixels - clips[2].frames[0].pixels).mean()
        self.assertLess(near, far)

    def test_consecutive_frames_beat_other_videos_statistically(self) -> None:
        """Over 1,000 sampled pairs, neighbors differ less than frames of two different videos."""
        clips = generate_synthetic_corpus(SynthConfig(n_videos=12, frames_per_video=30, image_size=16, seed=5))
        rng = Rng(6).generator
        near, far = [], []
        for _ in range(1000):
            a, b = rng.choice(len(clips), size=2, replace=False)
            t = int(rng.integers(len(clips[a]) - 1))
            near.append(np.abs(clips[a].frames[t].pixels - clips[a].frames[t + 1].pixels).mean())
            u, v = rng.integers(len(clips[a])), rng.integers(len(clips[b]))
            far.append(np.abs(clips[a].frames[u].pixels - clips[b].frames[v].pixels).mean())
        self.assertLess(float(np.mean(near)), float(np.mean(far)))

    def test_class_separation_zero_removes_the_class_offset(self) -> None:
        """Without separation, relabelling a clip leaves its pixels unchanged."""
        cfg = SynthConfig(n_videos=2, frames_per_video=4, image_size=12, class_separation=0.0, seed=7)
        track = _draw_track(cfg, Rng(8))
        self.assertArrayEqual(_render_frame(cfg, track, 0, 2), _render_frame(cfg, track, 1, 2))
        strong = SynthConfig(**{**cfg.__dict__, "class_separation": 1.0})
        self.assertFalse(np.array_equal(_render_frame(strong, track, 0, 2), _render_frame(strong, track, 1, 2)))

    def test_corrupted_clips(self) -> None:
        """A corrupt fraction of 0.5 splices half the videos and drops their labels."""
        cfg = SynthConfig(n_videos=6, frames_per_video=20, image_size=16, corrupt_fraction=0.5, seed=1)
        clips = generate_synthetic_corpus(cfg)
        corrupted = [c for c in clips if c.tag == CORRUPTED_TAG]
        self.assertEqual(len(corrupted), 3)
        self.assertTrue(all(c.latent_class is None for c in corrupted))

    def test_invalid_configs(self) -> None:
        """Out-of-range parameters are configuration errors."""
        for bad in [
            {"n_classes": 1},
            {"fps": 0.0},
            {"corrupt_fraction": 1.0},
            {"n_videos": 0},
            {"class_separation": 1.5},
        ]:
            with self.subTest(**bad):
                with self.assertRaises(ConfigError):
                    SynthConfig(**bad)  # type: ignore[arg-type]

    def test_tiny_images_rejected(self) -> None:
        """Images below the minimum size cannot hold a lesion."""
        with self.assertRaises(CorpusError):
            generate_synthetic_corpus(SynthConfig(n_videos=1, image_size=4))


class DiskCorpusTests(USCLTestCase):
    def test_write_then_load(self) -> None:
        """The loader reads back ids, fps, labels, tags and 8-bit pixels."""
        cfg = SynthConfig(n_videos=3, frames_per_video=8, image_size=12, corrupt_fraction=0.34, seed=2)
        clips = generate_synthetic_corpus(cfg)
        with tempfile.TemporaryDirectory() as tmp:
            write_corpus_to_disk(clips, tmp)
            loaded = load_corpus_from_disk(tmp)
        self.assertEqual([c.video_id for c in loaded], [c.video_id for c in clips])
        for original, back in zip(clips, loaded):
            self.assertEqual(back.fps, original.fps)
            self.assertEqual(back.latent_class, original.latent_class)
            self.assertEqual(back.tag, original.tag)
            expected = np.round(original.frames[3].pixels * 255.0) / 255.0
            np.testing.assert_allclose(back.frames[3].pixels, expected, atol=1e-12)

    def test_round_trip_quantization_bound(self) -> None:
        """Writing and reloading a corpus changes no pixel by more than 1/510."""
        clips = generate_synthetic_corpus(SynthConfig(n_videos=4, frames_per_video=10, image_size=16, seed=9))
        with tempfile.TemporaryDirectory() as tmp:
            write_corpus_to_disk(clips, tmp)
            loaded = load_corpus_from_disk(tmp)
        worst = max(
            float(np.abs(a.pixels - b.pixels).max())
            for original, back in zip(clips, loaded)
            for a, b in zip(original.frames, back.frames)
        )
        self.assertLessEqual(worst, 1.0 / 510.0 + 1e-12)

    def test_non_positive_fps_names_meta_file(self) -> None:
        """fps <= 0 in a meta file is an error that names the file."""
        for fps in ("0", "-3"):
            with self.subTest(fps=fps):
                with tempfile.TemporaryDirectory() as tmp:
                    video = Path(tmp) / "video_a"
                    video.mkdir()
                    (video / "meta").write_text(f"fps={fps}\n")
                    with self.assertRaises(CorpusError) as ctx:
                        load_corpus_from_disk(tmp)
                self.assertIn(str(video / "meta"), str(ctx.exception))
                self.assertIn("fps must be positive", str(ctx.exception))

    def test_missing_directory(self) -> None:
        """A missing corpus root names the path."""
        with self.assertRaises(CorpusError) as ctx:
            load_corpus_from_disk("/nonexistent/corpus")
        self.assertIn("/nonexistent/corpus", str(ctx.exception))

    def test_missing_meta(self) -> None:
        """Every video directory needs a meta file."""
        with tempfile.TemporaryDirectory() as tmp:
            (Path(tmp) / "video_a").mkdir()
            with self.assertRaises(CorpusError) as ctx:
                load_corpus_from_disk(tmp)
        self.assertIn("meta", str(ctx.exception))

    def test_unreadable_frame(self) -> None:
        """A corrupt PGM names the offending file."""
        with tempfile.TemporaryDirectory() as tmp:
            video = Path(tmp) / "video_a"
            video.mkdir()
            (video / "meta").write_text("fps=20\nclass=0\n")
            (video / "frame_00000.pgm").write_bytes(b"not a pgm")
            with self.assertRaises(CorpusError) as ctx:
                load_corpus_from_disk(tmp)
        self.assertIn("frame_00000.pgm", str(ctx.exception))

    def test_unlabeled_meta(self) -> None:
        """A meta file without class gives an unlabeled clip."""
        clip = random_clip("u", 3, latent_class=None)
        with tempfile.TemporaryDirectory() as tmp:
            write_corpus_to_disk([clip], tmp)
            loaded = load_corpus_from_disk(tmp)
        self.assertIsNone(loaded[0].latent_class)


class SplitTests(USCLTestCase):
    def test_split_is_by_video(self) -> None:
        """Every item lands on exactly one side, at round(ratio * n)."""
        items = [f"v{i}" for i in range(10)]
        first, second = split_by_video(items, 0.8, Rng(0))
        self.assertEqual(len(first), 8)
        self.assertEqual(len(second), 2)
        self.assertEqual(sorted(first + second), sorted(items))
        self.assertFalse(set(first) & set(second))

    def test_split_keeps_corpus_order(self) -> None:
        """Each side preserves the original order."""
        items = list(range(20))
        first, second = split_by_video(items, 0.5, Rng(1))
        self.assertEqual(first, sorted(first))
        self.assertEqual(second, sorted(second))

    def test_both_sides_non_empty(self) -> None:
        """Two or more items always give both sides something."""
        first, second = split_by_video(["a", "b"], 0.9, Rng(0))
        self.assertEqual((len(first), len(second)), (1, 1))

    def test_deterministic(self) -> None:
        """Same rng key, same split."""
        items = list(range(30))
        self.assertEqual(split_by_video(items, 0.8, Rng(5)), split_by_video(items, 0.8, Rng(5)))

    def test_ratio_bounds(self) -> None:
        """The ratio lies strictly inside (0, 1)."""
        with self.assertRaises(ConfigError):
            split_by_video([1, 2, 3], 1.0, Rng(0))
