"""
Positive-pair generation.

Four strategies, from weakest to strongest:

- ``simclr``: one image from the flattened image pool, augmented twice. Several
  pairs in a batch may come from the same video.
- ``s1``: one frame of a video, augmented twice.
- ``s2``: two distinct frames of a video, each augmented once.
- ``s3``: positive pair interpolation. Three frames in chronological order;
  the middle one is the anchor and each sample mixes the anchor with one
  flanking frame using a Beta-distributed coefficient.

All randomness comes from the ``Rng`` passed in. The two augmentations of a
pair use the sub-streams ``rng.child(1)`` and ``rng.child(2)``, so two
strategies that reach the same pre-augmentation images produce the same pair.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .data import FrameSet, Image
from .exceptions import ConfigError, InsufficientFramesError, PairGenerationError
from .metrics import PAIR_FALLBACKS, PAIRS_GENERATED
from .rng import Rng, beta_sample

logger = logging.getLogger(__name__)


class PairStrategy(StrEnum):
    SIMCLR = "simclr"
    S1 = "s1"
    S2 = "s2"
    S3 = "s3"


REQUIRED_FRAMES = {PairStrategy.S1: 1, PairStrategy.S2: 2, PairStrategy.S3: 3}
FALLBACK = {PairStrategy.S3: PairStrategy.S2, PairStrategy.S2: PairStrategy.S1}


@dataclass(frozen=True)
class AugmentConfig:
    """Random crop-and-resize, horizontal flip, brightness/contrast jitter, blur."""

    crop_min_ratio: float = 0.85
    flip_prob: float = 0.5
    jitter_strength: float = 0.6
    blur_enabled: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.crop_min_ratio <= 1.0:
            raise ConfigError(f"crop_min_ratio must be in (0, 1], got {self.crop_min_ratio}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if not 0.0 <= self.jitter_strength <= 1.0:
            raise ConfigError(f"jitter_strength must be in [0, 1], got {self.jitter_strength}")

    @classmethod
    def disabled(cls) -> AugmentConfig:
        """The identity augmentation."""
        return cls(crop_min_ratio=1.0, flip_prob=0.0, jitter_strength=0.0, blur_enabled=False)


@dataclass(frozen=True)
class PairGenConfig:
    strategy: PairStrategy = PairStrategy.S3
    beta_alpha: float = 2.0
    beta_beta: float = 2.0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    allow_fallback: bool = True

    def __post_init__(self) -> None:
        if not self.beta_alpha > 0 or not self.beta_beta > 0:
            raise ConfigError(
                f"Beta parameters must be positive, got ({self.beta_alpha}, {self.beta_beta})"
            )
        object.__setattr__(self, "strategy", PairStrategy(self.strategy))


@dataclass(frozen=True)
class PositivePair:
    """Two augmented samples of one video plus their provenance."""

    x1: Image
    x2: Image
    video_id: str
    frame_indices: tuple[int, ...]
    xi1: float = 1.0
    xi2: float = 1.0
    strategy: PairStrategy = PairStrategy.S3
    tag: str = ""

    def __post_init__(self) -> None:
        if self.x1.size != self.x2.size:
            raise PairGenerationError(f"pair sizes differ: {self.x1.size} vs {self.x2.size}")


@dataclass(frozen=True)
class PairBatch:
    pairs: tuple[PositivePair, ...]

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def video_ids(self) -> list[str]:
        return [p.video_id for p in self.pairs]

    def images(self) -> np.ndarray:
        """(2N, 1, H, W) stack; rows 2i and 2i + 1 belong to pair i."""
        stacked = [img.pixels for p in self.pairs for img in (p.x1, p.x2)]
        return np.stack(stacked)[:, None, :, :]


@dataclass(frozen=True)
class PoolImage:
    """One frame of the flattened image pool used by the SimCLR-style strategy."""

    video_id: str
    frame_index: int
    image: Image
    tag: str = ""


# Augmentation


def _resize_bilinear(pixels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h_in, w_in = pixels.shape
    h, w = size
    ys = np.linspace(0.0, h_in - 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w_in - 1.0, w) if w > 1 else np.zeros(1)
    grid = np.meshgrid(ys, xs, indexing="ij")
    return map_coordinates(pixels, grid, order=1, mode="nearest")


def augment(img: Image, cfg: AugmentConfig, rng: Rng) -> Image:
    """
    Apply, in order: random crop (area ratio ~ U[crop_min_ratio, 1], aspect
    kept) resized back bilinearly; horizontal flip; brightness/contrast jitter
    ``clamp(c * (p - mean) + mean + b, 0, 1)``; optional 3x3 Gaussian blur
    (sigma 0.5). Stages that cannot change the image are skipped, so the
    disabled config is an exact identity.
    """
    pixels = img.pixels
    h, w = pixels.shape

    ratio = rng.uniform(cfg.crop_min_ratio, 1.0)
    ch = min(h, max(1, int(round(h * math.sqrt(ratio)))))
    cw = min(w, max(1, int(round(w * math.sqrt(ratio)))))
    top = rng.integer(h - ch + 1)
    left = rng.integer(w - cw + 1)
    if (ch, cw) != (h, w):
        pixels = _resize_bilinear(pixels[top : top + ch, left : left + cw], (h, w))

    if rng.random() < cfg.flip_prob:
        pixels = pixels[:, ::-1]

    s = cfg.jitter_strength
    if s > 0:
        brightness = rng.uniform(-s, s)
        contrast = rng.uniform(1.0 - s, 1.0 + s)
        m = float(pixels.mean())
        pixels = np.clip(contrast * (pixels - m) + m + brightness, 0.0, 1.0)

    if cfg.blur_enabled:
        pixels = gaussian_filter(pixels, sigma=0.5, truncate=2.0, mode="nearest")

    return Image(np.clip(pixels, 0.0, 1.0))


def _augment_twice(a: Image, b: Image, cfg: PairGenConfig, rng: Rng) -> tuple[Image, Image]:
    return augment(a, cfg.augment, rng.child(1)), augment(b, cfg.augment, rng.child(2))


# Strategies


def _mix(xi: float, anchor: np.ndarray, other: np.ndarray) -> Image:
    return Image(np.clip(xi * anchor + (1.0 - xi) * other, 0.0, 1.0))


def ppi_generate(
    fs: FrameSet,
    cfg: PairGenConfig,
    rng: Rng,
    xi: tuple[float, float] | None = None,
) -> PositivePair:
    """
    Positive pair interpolation.

    Picks three distinct positions uniformly, sorts them into (early, anchor,
    late) and forms ``xi1 * anchor + (1 - xi1) * early`` and
    ``xi2 * anchor + (1 - xi2) * late`` with xi ~ Beta(alpha, beta) unless
    ``xi`` forces the coefficients. Each mix is then augmented independently.
    """
    if fs.K < 3:
        fallback = PairStrategy.S2 if fs.K == 2 else PairStrategy.S1
        raise InsufficientFramesError(PairStrategy.S3, fs.K, 3, fallback)
    if xi is not None and not all(0.0 <= x <= 1.0 for x in xi):
        raise ConfigError(f"forced xi must lie in [0, 1], got {xi}")
    early, mid, late = sorted(rng.choice(fs.K, 3))
    if xi is None:
        xi1 = beta_sample(cfg.beta_alpha, cfg.beta_beta, rng)
        xi2 = beta_sample(cfg.beta_alpha, cfg.beta_beta, rng)
    else:
        xi1, xi2 = xi
    anchor = fs.frames[mid].pixels
    m1 = _mix(xi1, anchor, fs.frames[early].pixels)
    m2 = _mix(xi2, anchor, fs.frames[late].pixels)
    x1, x2 = _augment_twice(m1, m2, cfg, rng)
    return PositivePair(
        x1=x1,
        x2=x2,
        video_id=fs.video_id,
        frame_indices=tuple(fs.source_indices[i] for i in (early, mid, late)),
        xi1=xi1,
        xi2=xi2,
        strategy=PairStrategy.S3,
        tag=fs.tag,
    )


def s1_generate(fs: FrameSet, cfg: PairGenConfig, rng: Rng) -> PositivePair:
    """One uniformly chosen frame, augmented twice."""
    if fs.K < 1:
        raise InsufficientFramesError(PairStrategy.S1, fs.K, 1, "none")
    pos = rng.integer(fs.K)
    frame = fs.frames[pos]
    x1, x2 = _augment_twice(frame, frame, cfg, rng)
    return PositivePair(
        x1=x1,
        x2=x2,
        video_id=fs.video_id,
        frame_indices=(fs.source_indices[pos],),
        strategy=PairStrategy.S1,
        tag=fs.tag,
    )


def s2_generate(fs: FrameSet, cfg: PairGenConfig, rng: Rng) -> PositivePair:
    """Two distinct frames drawn without replacement, each augmented once."""
    if fs.K < 2:
        raise InsufficientFramesError(PairStrategy.S2, fs.K, 2, PairStrategy.S1)
    a, b = rng.choice(fs.K, 2)
    x1, x2 = _augment_twice(fs.frames[a], fs.frames[b], cfg, rng)
    return PositivePair(
        x1=x1,
        x2=x2,
        video_id=fs.video_id,
        frame_indices=(fs.source_indices[a], fs.source_indices[b]),
        strategy=PairStrategy.S2,
        tag=fs.tag,
    )


def image_pool(frame_sets: Sequence[FrameSet]) -> list[PoolImage]:
    """Every frame of every frame set, in frame-set order."""
    return [
        PoolImage(fs.video_id, idx, frame, fs.tag)
        for fs in frame_sets
        for idx, frame in zip(fs.source_indices, fs.frames)
    ]


def _simclr_pair(item: PoolImage, cfg: PairGenConfig, rng: Rng) -> PositivePair:
    x1, x2 = _augment_twice(item.image, item.image, cfg, rng)
    return PositivePair(
        x1=x1,
        x2=x2,
        video_id=item.video_id,
        frame_indices=(item.frame_index,),
        strategy=PairStrategy.SIMCLR,
        tag=item.tag,
    )


def simclr_generate(pool: Sequence[PoolImage], cfg: PairGenConfig, rng: Rng) -> PositivePair:
    """One image drawn uniformly from the pool, augmented twice."""
    if not pool:
        raise PairGenerationError("image pool is empty")
    return _simclr_pair(pool[rng.integer(len(pool))], cfg, rng)


_VIDEO_GENERATORS: dict[PairStrategy, Callable[[FrameSet, PairGenConfig, Rng], PositivePair]] = {
    PairStrategy.S1: s1_generate,
    PairStrategy.S2: s2_generate,
    PairStrategy.S3: ppi_generate,
}


def generate_pair(fs: FrameSet, cfg: PairGenConfig, rng: Rng) -> PositivePair:
    """
    One pair from one video with the configured strategy.

    Short frame sets degrade S3 -> S2 -> S1 when ``cfg.allow_fallback`` is
    set; every degradation is logged and counted.
    """
    strategy = cfg.strategy
    if strategy == PairStrategy.SIMCLR:
        raise PairGenerationError("the simclr strategy samples from an image pool")
    while fs.K < REQUIRED_FRAMES[strategy]:
        if not cfg.allow_fallback or strategy not in FALLBACK:
            raise InsufficientFramesError(
                strategy, fs.K, REQUIRED_FRAMES[strategy], FALLBACK.get(strategy, "none")
            )
        weaker = FALLBACK[strategy]
        logger.warning(
            f"Video {fs.video_id} has K = {fs.K}; generating {weaker} pair instead of {strategy}"
        )
        PAIR_FALLBACKS.labels(from_strategy=strategy.value, to_strategy=weaker.value).inc()
        strategy = weaker
    return _VIDEO_GENERATORS[strategy](fs, cfg, rng)


def eligible_frame_sets(frame_sets: Sequence[FrameSet], cfg: PairGenConfig) -> list[FrameSet]:
    """Frame sets a video strategy can draw from (any non-empty one with fallback)."""
    if cfg.strategy == PairStrategy.SIMCLR:
        return [fs for fs in frame_sets if fs.K >= 1]
    minimum = 1 if cfg.allow_fallback else REQUIRED_FRAMES[cfg.strategy]
    return [fs for fs in frame_sets if fs.K >= minimum]


def make_batch(
    frame_sets: Sequence[FrameSet], n: int, cfg: PairGenConfig, rng: Rng
) -> PairBatch:
    """
    N pairs. Video strategies sample N distinct videos without replacement
    and make one pair per video; the SimCLR-style strategy samples N distinct
    pool images. Pair i draws from ``rng.child(i)``.
    """
    if n < 1:
        raise PairGenerationError(f"batch size must be positive, got {n}")
    if cfg.strategy == PairStrategy.SIMCLR:
        pool = image_pool(frame_sets)
        if len(pool) < n:
            raise PairGenerationError(f"need {n} pool images, have {len(pool)}")
        picks = rng.choice(len(pool), n)
        pairs = [_simclr_pair(pool[p], cfg, rng.child(i)) for i, p in enumerate(picks)]
    else:
        eligible = eligible_frame_sets(frame_sets, cfg)
        if len(eligible) < n:
            raise PairGenerationError(
                f"need {n} eligible videos for strategy {cfg.strategy}, have {len(eligible)}"
            )
        picks = rng.choice(len(eligible), n)
        pairs = [generate_pair(eligible[p], cfg, rng.child(i)) for i, p in enumerate(picks)]
    PAIRS_GENERATED.labels(strategy=cfg.strategy.value).inc(n)
    return PairBatch(tuple(pairs))
