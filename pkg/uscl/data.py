"""
Video corpora: a synthetic ultrasound-like generator, an on-disk loader, and
frame-set extraction.

On-disk layout (one directory per video)::

    root/video_<id>/frame_00000.pgm   binary P5, maxval 255
    root/video_<id>/frame_00001.pgm
    root/video_<id>/meta              fps=<float>, optional class=<int>, tag=<str>

Latent classes exist only on ``VideoClip``. ``FrameSet``, the type every
pre-training code path consumes, has no label field.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, TypeVar

import numpy as np
from dotenv import dotenv_values
from PIL import Image as PILImage
from PIL import UnidentifiedImageError
from scipy.ndimage import gaussian_filter
from scipy.special import expit

from .exceptions import ConfigError, CorpusError
from .rng import STREAM_CORPUS, Rng

logger = logging.getLogger(__name__)

# Frames kept in a frame set are more than 5 source frames apart.
MIN_INTERVAL = 6
# Smallest image that still holds a lesion with a visible rim.
MIN_IMAGE_SIZE = 8

CLEAN_TAG = "clean"
CORRUPTED_TAG = "corrupted"


@dataclass(frozen=True)
class Image:
    """Single-channel image with pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise CorpusError(f"image must be a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise CorpusError("image pixels must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def size(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True)
class VideoClip:
    """A raw video: temporally ordered frames of one size."""

    video_id: str
    fps: float
    frames: tuple[Image, ...]
    latent_class: int | None = None
    tag: str = CLEAN_TAG

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise CorpusError(f"video {self.video_id}: fps must be positive")
        sizes = {f.size for f in self.frames}
        if len(sizes) > 1:
            raise CorpusError(f"video {self.video_id}: frames differ in size {sorted(sizes)}")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class FrameSet:
    """Frames subsampled from one video, plus their source indices."""

    video_id: str
    frames: tuple[Image, ...]
    source_indices: tuple[int, ...]
    tag: str = CLEAN_TAG

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.source_indices):
            raise CorpusError(f"frame set {self.video_id}: frames/indices length mismatch")
        gaps = np.diff(self.source_indices)
        if np.any(gaps < MIN_INTERVAL):
            raise CorpusError(
                f"frame set {self.video_id}: source indices must be at least "
                f"{MIN_INTERVAL} apart, got {list(self.source_indices)}"
            )

    @property
    def K(self) -> int:  # noqa: N802
        return len(self.frames)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic corpus; the corpus is a pure function of it."""

    n_videos: int = 60
    frames_per_video: int = 60
    fps: float = 23.0
    image_size: int = 32
    n_classes: int = 2
    noise_level: float = 0.05
    drift_speed: float = 0.3
    class_separation: float = 0.25
    corrupt_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_videos < 1 or self.frames_per_video < 1 or self.image_size < 1:
            raise ConfigError("n_videos, frames_per_video and image_size must be positive")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be at least 2, got {self.n_classes}")
        if not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.noise_level < 0 or self.drift_speed < 0:
            raise ConfigError("noise_level and drift_speed must be non-negative")
        if not 0.0 <= self.class_separation <= 1.0:
            raise ConfigError(f"class_separation must be in [0, 1], got {self.class_separation}")
        if not 0.0 <= self.corrupt_fraction < 1.0:
            raise ConfigError(f"corrupt_fraction must be in [0, 1), got {self.corrupt_fraction}")


# Frame-set extraction


def frame_step(fps: float, samples_per_second: float = 3.0) -> int:
    """Source-frame stride: ``floor(fps / samples_per_second)``, at least 6."""
    if not samples_per_second > 0:
        raise ConfigError(f"samples_per_second must be positive, got {samples_per_second}")
    return max(MIN_INTERVAL, int(math.floor(fps / samples_per_second)))


def extract_frame_set(clip: VideoClip, samples_per_second: float = 3.0) -> FrameSet:
    """Take every step-th frame from index 0; see ``frame_step``."""
    if len(clip) == 0:
        raise CorpusError(f"video {clip.video_id} has no frames")
    step = frame_step(clip.fps, samples_per_second)
    indices = tuple(range(0, len(clip), step))
    return FrameSet(
        video_id=clip.video_id,
        frames=tuple(clip.frames[i] for i in indices),
        source_indices=indices,
        tag=clip.tag,
    )


def extract_frame_sets(
    clips: Sequence[VideoClip], samples_per_second: float = 3.0
) -> list[FrameSet]:
    return [extract_frame_set(c, samples_per_second) for c in clips]


# Synthetic corpus


@dataclass
class _LesionTrack:
    """Per-clip geometry and texture, drawn once and animated per frame."""

    center: tuple[float, float]
    axes: tuple[float, float]
    amplitude: tuple[float, float]
    periods: tuple[float, float, float]
    phases: tuple[float, float, float]
    brightness: float
    background: np.ndarray
    background_drift: tuple[float, float]
    texture: tuple[np.ndarray, np.ndarray]
    texture_rate: float
    speckle_gain: float
    sharpness_gain: float
    noise: np.ndarray = field(repr=False)


def _class_texture(latent_class: int, n_classes: int, separation: float) -> tuple[float, float]:
    """
    (interior speckle std, rim sharpness) for a class, both monotone in class.
    Each clip scales the pair by its own gains.
    """
    c = separation * (latent_class / (n_classes - 1) - 0.5)
    return 0.10 + 0.06 * c, 6.0 - 4.0 * c


def _draw_track(cfg: SynthConfig, rng: Rng) -> _LesionTrack:
    size = cfg.image_size
    pad = size // 2
    semi = rng.uniform(0.18, 0.26) * size
    amp = cfg.drift_speed * 0.15 * size
    bg = gaussian_filter(rng.normal((size + 2 * pad, size + 2 * pad)), sigma=1.0)
    bg = 0.25 + 0.06 * bg / max(float(bg.std()), 1e-12)
    textures = []
    for _ in range(2):
        t = gaussian_filter(rng.normal((size, size)), sigma=0.8)
        textures.append(t / max(float(t.std()), 1e-12))
    return _LesionTrack(
        center=(rng.uniform(0.4, 0.6) * size, rng.uniform(0.4, 0.6) * size),
        axes=(semi, semi * rng.uniform(0.7, 1.0)),
        amplitude=(amp, amp),
        periods=(rng.uniform(40, 80), rng.uniform(40, 80), rng.uniform(30, 60)),
        phases=(rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi), rng.uniform(0, 2 * math.pi)),
        brightness=rng.uniform(0.55, 0.75),
        background=bg,
        background_drift=(rng.uniform(-1, 1) * pad * 0.5, rng.uniform(-1, 1) * pad * 0.5),
        texture=(textures[0], textures[1]),
        texture_rate=0.05 * (0.5 + cfg.drift_speed),
        speckle_gain=rng.uniform(0.6, 1.4),
        sharpness_gain=rng.uniform(0.6, 1.4),
        noise=rng.normal((cfg.frames_per_video, size, size)),
    )


def _render_frame(
    cfg: SynthConfig, track: _LesionTrack, latent_class: int, t: int
) -> np.ndarray:
    size = cfg.image_size
    pad = size // 2
    speckle_std, sharpness = _class_texture(latent_class, cfg.n_classes, cfg.class_separation)
    speckle_std *= track.speckle_gain
    sharpness *= track.sharpness_gain
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    wave = [math.sin(2 * math.pi * t / p + ph) for p, ph in zip(track.periods, track.phases)]
    cy = track.center[0] + track.amplitude[0] * wave[0]
    cx = track.center[1] + track.amplitude[1] * wave[1]
    scale = 1.0 + 0.1 * min(cfg.drift_speed, 1.0) * wave[2]
    r = np.sqrt(
        ((yy - cy) / (track.axes[0] * scale)) ** 2 + ((xx - cx) / (track.axes[1] * scale)) ** 2
    )
    mask = expit(sharpness * (1.0 - r))

    # Background speckle drifts with the probe, one pixel at a time.
    oy = int(round(pad + track.background_drift[0] * wave[1]))
    ox = int(round(pad + track.background_drift[1] * wave[0]))
    background = track.background[oy : oy + size, ox : ox + size]

    angle = track.texture_rate * t
    texture = math.cos(angle) * track.texture[0] + math.sin(angle) * track.texture[1]
    lesion = track.brightness + speckle_std * texture

    frame = background * (1.0 - mask) + lesion * mask
    frame = frame + cfg.noise_level * track.noise[t]
    return np.clip(frame, 0.0, 1.0)


def _render_clip(cfg: SynthConfig, index: int, corrupted: bool) -> VideoClip:
    latent_class = index % cfg.n_classes
    rng = Rng(cfg.seed, (STREAM_CORPUS, 0, index))
    track = _draw_track(cfg, rng)
    if corrupted:
        # Splice: second half comes from an unrelated clip of another class.
        other_class = (latent_class + 1) % cfg.n_classes
        other = _draw_track(cfg, rng)
        half = cfg.frames_per_video // 2
        pixels = [
            _render_frame(cfg, track, latent_class, t)
            if t < half
            else _render_frame(cfg, other, other_class, t)
            for t in range(cfg.frames_per_video)
        ]
    else:
        pixels = [_render_frame(cfg, track, latent_class, t) for t in range(cfg.frames_per_video)]
    return VideoClip(
        video_id=f"{index:04d}",
        fps=cfg.fps,
        frames=tuple(Image(p) for p in pixels),
        latent_class=None if corrupted else latent_class,
        tag=CORRUPTED_TAG if corrupted else CLEAN_TAG,
    )


def generate_synthetic_corpus(cfg: SynthConfig, max_workers: int = 1) -> list[VideoClip]:
    """
    Render ``cfg.n_videos`` clips.

    Classes are assigned round-robin by video index. Each clip draws from its
    own sub-stream ``(seed, corpus, 0, index)``, so any ``max_workers`` gives
    the same corpus.
    """
    if cfg.image_size < MIN_IMAGE_SIZE:
        raise CorpusError(
            f"image_size {cfg.image_size} is too small for a lesion; "
            f"minimum is {MIN_IMAGE_SIZE}"
        )
    n_corrupt = int(round(cfg.corrupt_fraction * cfg.n_videos))
    corrupt = set(Rng(cfg.seed, (STREAM_CORPUS, 1)).choice(cfg.n_videos, n_corrupt))
    logger.info(
        f"Generating {cfg.n_videos} synthetic clips "
        f"({n_corrupt} corrupted, {cfg.frames_per_video} frames, {cfg.image_size}px)"
    )
    indices = range(cfg.n_videos)
    if max_workers <= 1:
        return [_render_clip(cfg, i, i in corrupt) for i in indices]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda i: _render_clip(cfg, i, i in corrupt), indices))


# On-disk corpora


def _read_meta(path: Path) -> tuple[float, int | None, str]:
    if not path.is_file():
        raise CorpusError(f"missing meta file: {path}")
    values = dotenv_values(path, interpolate=False)
    try:
        fps = float(values["fps"] or "")
        label = values.get("class")
        latent_class = int(label) if label not in (None, "") else None
    except (KeyError, ValueError) as e:
        raise CorpusError(f"bad meta file {path}: {e}") from e
    if not fps > 0:
        raise CorpusError(f"bad meta file {path}: fps must be positive, got {fps}")
    return fps, latent_class, values.get("tag") or "disk"


def _read_pgm(path: Path) -> np.ndarray:
    try:
        with PILImage.open(path) as img:
            if img.format != "PPM" or img.mode != "L":
                raise CorpusError(f"not an 8-bit grayscale PGM: {path}")
            return np.asarray(img, dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as e:
        raise CorpusError(f"unreadable PGM {path}: {e}") from e


def load_corpus_from_disk(root_path: str | Path) -> list[VideoClip]:
    """Load every ``video_*`` directory under ``root_path`` in name order."""
    root = Path(root_path)
    if not root.is_dir():
        raise CorpusError(f"corpus directory not found: {root}")
    clips: list[VideoClip] = []
    for video_dir in sorted(p for p in root.glob("video_*") if p.is_dir()):
        fps, latent_class, tag = _read_meta(video_dir / "meta")
        frame_paths = sorted(video_dir.glob("*.pgm"))
        if not frame_paths:
            raise CorpusError(f"no PGM frames in {video_dir}")
        frames: list[Image] = []
        for path in frame_paths:
            pixels = _read_pgm(path)
            if frames and pixels.shape != frames[0].size:
                raise CorpusError(
                    f"inconsistent frame size in {path}: {pixels.shape} "
                    f"vs {frames[0].size}"
                )
            frames.append(Image(pixels))
        clips.append(
            VideoClip(
                video_id=video_dir.name.removeprefix("video_"),
                fps=fps,
                frames=tuple(frames),
                latent_class=latent_class,
                tag=tag,
            )
        )
    logger.info(f"Loaded {len(clips)} videos from {root}")
    return clips


def write_corpus_to_disk(clips: Sequence[VideoClip], root_path: str | Path) -> Path:
    """Write ``clips`` in the layout ``load_corpus_from_disk`` reads."""
    root = Path(root_path)
    for clip in clips:
        video_dir = root / f"video_{clip.video_id}"
        video_dir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(clip.frames):
            quantized = np.round(frame.pixels * 255.0).astype(np.uint8)
            PILImage.fromarray(quantized).save(
                video_dir / f"frame_{i:05d}.pgm", format="PPM"
            )
        lines = [f"fps={clip.fps!r}", f"tag={clip.tag}"]
        if clip.latent_class is not None:
            lines.append(f"class={clip.latent_class}")
        (video_dir / "meta").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(clips)} videos to {root}")
    return root


# Video-level splitting

T = TypeVar("T")


def split_by_video(items: Sequence[T], ratio: float, rng: Rng) -> tuple[list[T], list[T]]:
    """
    Shuffle whole videos and cut at ``round(ratio * n)``.

    Items are per-video objects (clips or frame sets), so no video can land on
    both sides. With two or more items each side gets at least one.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(items)
    order = rng.permutation(n)
    cut = int(round(ratio * n))
    if n >= 2:
        cut = min(max(cut, 1), n - 1)
    first = [items[i] for i in sorted(order[:cut])]
    second = [items[i] for i in sorted(order[cut:])]
    return first, second
