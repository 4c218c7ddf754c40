"""
CSV exports for external analysis.

- ``export_weights``: weighting-net scores of generated pairs, one row per pair
- ``export_embeddings``: representation h of every frame-set frame
- ``export_frame_similarity``: first frame of each video against every other
  frame, with representation cosine similarity and pair weight

Every file is RFC-4180 CSV with a fixed header. Floats are written with
``repr`` so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from ..checkpoint import Checkpoint
from ..data import FrameSet, VideoClip, extract_frame_sets
from ..exceptions import CheckpointError
from ..losses import cosine_sim
from ..nets import encode, weigh_pairs
from ..pairgen import (
    PairBatch,
    PairStrategy,
    PositivePair,
    generate_pair,
    image_pool,
    simclr_generate,
)
from ..rng import STREAM_EXPORT, Rng
from .evaluation import chunked

logger = logging.getLogger(__name__)

WEIGHTS_HEADER = ["video_id", "tag", "frame_indices", "xi1", "xi2", "weight"]
SIMILARITY_HEADER = ["video_id", "tag", "frame_index", "cosine_similarity", "weight"]


def _cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write ``rows`` under ``header``; returns the path."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with target.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
            count += 1
    logger.info(f"Wrote {count} rows to {target}")
    return target


def _export_pair(fs: FrameSet, ckpt: Checkpoint, rng: Rng) -> PositivePair:
    cfg = ckpt.run.pair_config()
    if cfg.strategy == PairStrategy.SIMCLR:
        return simclr_generate(image_pool([fs]), cfg, rng)
    # Short frame sets degrade instead of dropping out of the export.
    return generate_pair(fs, replace(cfg, allow_fallback=True), rng)


def export_weights(
    ckpt: Checkpoint,
    clips: Sequence[VideoClip],
    path: str | Path,
    seed: int = 0,
    passes: int = 1,
) -> Path:
    """
    Score ``passes`` generated pairs per video with the weighting net.

    Pair p of video v draws from ``Rng(seed).child(STREAM_EXPORT, p, v)``,
    so the sweep is deterministic for a fixed seed.

    Raises:
        CheckpointError: for a plain-mode checkpoint
    """
    theta_c = ckpt.require_weight_net()
    frame_sets = extract_frame_sets(clips, ckpt.run.samples_per_second)
    root = Rng(seed)
    pairs = [
        _export_pair(fs, ckpt, root.child(STREAM_EXPORT, p, v))
        for p in range(passes)
        for v, fs in enumerate(frame_sets)
    ]
    if not pairs:
        raise CheckpointError("nothing to export: the corpus is empty")
    images = PairBatch(tuple(pairs)).images()
    h = chunked(encode, ckpt.theta_m, images)
    weights = weigh_pairs(theta_c, h).numpy()
    rows = (
        [
            pair.video_id,
            pair.tag,
            ";".join(str(i) for i in pair.frame_indices),
            pair.xi1,
            pair.xi2,
            w,
        ]
        for pair, w in zip(pairs, weights)
    )
    return write_csv(path, WEIGHTS_HEADER, rows)


def export_embeddings(ckpt: Checkpoint, clips: Sequence[VideoClip], path: str | Path) -> Path:
    """One row per frame-set frame: ``video_id, frame_index, h1 .. hD`` in corpus order."""
    frame_sets = extract_frame_sets(clips, ckpt.run.samples_per_second)
    header = ["video_id", "frame_index"] + [f"h{i + 1}" for i in range(ckpt.theta_m.repr_dim)]
    keys = [(fs.video_id, idx) for fs in frame_sets for idx in fs.source_indices]
    if not keys:
        return write_csv(path, header, [])
    images = np.stack([f.pixels for fs in frame_sets for f in fs.frames])[:, None, :, :]
    h = chunked(encode, ckpt.theta_m, images)
    rows = ([video_id, idx, *row] for (video_id, idx), row in zip(keys, h))
    return write_csv(path, header, rows)


def export_frame_similarity(
    ckpt: Checkpoint, clips: Sequence[VideoClip], path: str | Path
) -> Path:
    """
    For each video, the unaugmented first frame-set frame paired with every
    other frame: cosine similarity of their representations and the pair's
    weight. Rows within a video run from most to least similar; videos with
    a single frame contribute nothing.

    Raises:
        CheckpointError: for a plain-mode checkpoint
    """
    theta_c = ckpt.require_weight_net()
    frame_sets = extract_frame_sets(clips, ckpt.run.samples_per_second)
    rows: list[list[Any]] = []
    for fs in frame_sets:
        if fs.K < 2:
            continue
        images = np.stack([f.pixels for f in fs.frames])[:, None, :, :]
        h = chunked(encode, ckpt.theta_m, images)
        # Interleave (first, other) rows so each pair is one weighting-net input.
        stacked = np.stack([row for k in range(1, fs.K) for row in (h[0], h[k])])
        weights = weigh_pairs(theta_c, stacked).numpy()
        video_rows = [
            [fs.video_id, fs.tag, fs.source_indices[k], cosine_sim(h[0], h[k]).item(), w]
            for k, w in zip(range(1, fs.K), weights)
        ]
        video_rows.sort(key=lambda r: (-r[3], r[2]))
        rows.extend(video_rows)
    return write_csv(path, SIMILARITY_HEADER, rows)
