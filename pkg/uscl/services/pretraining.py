"""
Pre-training runs and the experiments built on them.

``pretrain`` splits the corpus 80/20 by video, trains for ``epochs`` epochs
and writes ``checkpoint.ckpt`` and ``epochs.csv`` to the output directory.
``ablate`` runs the pair-strategy ladder over shared seeds and ``sweep`` runs
one config key over a list of values; both linear-probe every run.

Random streams, all derived from the run seed:

- train/valid split: ``(STREAM_SPLIT,)``
- parameter init: ``(STREAM_INIT,)``
- epoch shuffle: ``(STREAM_SHUFFLE, epoch)``
- train pairs: ``(STREAM_TRAIN_PAIRS, epoch, step)``
- validation pairs (meta step): ``(STREAM_VALID_PAIRS, epoch, step)``
- end-of-epoch validation batch: ``(STREAM_EVAL, epoch)``
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..checkpoint import Checkpoint, save_checkpoint
from ..config import RunConfig, parse_values
from ..data import (
    FrameSet,
    VideoClip,
    extract_frame_sets,
    generate_synthetic_corpus,
    load_corpus_from_disk,
    split_by_video,
)
from ..exceptions import CheckpointError, ConfigError, PairGenerationError
from ..losses import validation_loss
from ..metrics import write_metrics
from ..pairgen import PairBatch, PairGenConfig, PairStrategy, eligible_frame_sets, make_batch
from ..rng import (
    STREAM_EVAL,
    STREAM_INIT,
    STREAM_SHUFFLE,
    STREAM_SPLIT,
    STREAM_TRAIN_PAIRS,
    STREAM_VALID_PAIRS,
    Rng,
)
from .evaluation import ProbeReport, linear_probe
from .exports import write_csv
from .training import (
    StepResult,
    TrainMode,
    TrainState,
    forward,
    init_state,
    meta_train_step,
    plain_train_step,
)

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ckpt"
EPOCH_LOG_NAME = "epochs.csv"
METRICS_NAME = "metrics.prom"

EPOCH_HEADER = [
    "epoch",
    "steps",
    "train_loss",
    "weighted_loss",
    "valid_loss",
    "weight_mean",
    "weight_std",
]
ABLATION_HEADER = ["rung", "strategy", "mode", "seed", "accuracy", "macro_f1"]
SWEEP_HEADER = ["key", "value", "seed", "accuracy", "macro_f1"]

# rung name -> (pair strategy, training mode)
RUNGS: dict[str, tuple[PairStrategy, TrainMode]] = {
    "simclr": (PairStrategy.SIMCLR, TrainMode.PLAIN),
    "s1": (PairStrategy.S1, TrainMode.PLAIN),
    "s2": (PairStrategy.S2, TrainMode.PLAIN),
    "s3": (PairStrategy.S3, TrainMode.PLAIN),
    "meta+s3": (PairStrategy.S3, TrainMode.META),
    "meta+simclr": (PairStrategy.SIMCLR, TrainMode.META),
}
LADDER = ("simclr", "s1", "s2", "s3", "meta+s3")

# Keys a sweep may vary; the rest identify the run rather than tune it.
UNSWEEPABLE = frozenset({"seed", "output_dir", "corpus", "export_metrics"})


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    steps: int
    train_loss: float
    weighted_loss: float
    valid_loss: float
    weight_mean: float | None
    weight_std: float | None

    def row(self) -> list[object]:
        return [
            self.epoch,
            self.steps,
            self.train_loss,
            self.weighted_loss,
            self.valid_loss,
            "" if self.weight_mean is None else self.weight_mean,
            "" if self.weight_std is None else self.weight_std,
        ]


@dataclass(frozen=True)
class PretrainResult:
    checkpoint: Checkpoint
    checkpoint_path: Path
    log_path: Path
    epochs: list[EpochRecord]
    state: TrainState


@dataclass(frozen=True)
class ExperimentRow:
    """One probed run of an ablation ladder or a sweep."""

    label: str
    strategy: str
    mode: str
    seed: int
    report: ProbeReport


def load_corpus(cfg: RunConfig) -> list[VideoClip]:
    """The synthetic corpus for ``cfg`` or the on-disk corpus it names."""
    if cfg.is_synthetic:
        return generate_synthetic_corpus(cfg.synth_config())
    return load_corpus_from_disk(cfg.corpus)


def _eval_loss(
    state: TrainState, sets: Sequence[FrameSet], n: int, pcfg: PairGenConfig, tau: float, rng: Rng
) -> float:
    batch = make_batch(sets, n, pcfg, rng)
    _, z = forward(state.theta_m, batch)
    return validation_loss(z, tau).item()


def _epoch_batches(
    train_sets: Sequence[FrameSet],
    cfg: RunConfig,
    pcfg: PairGenConfig,
    root: Rng,
    epoch: int,
    steps: int,
) -> list[PairBatch]:
    n = cfg.batch_size
    if cfg.steps_per_epoch or pcfg.strategy == PairStrategy.SIMCLR:
        return [
            make_batch(train_sets, n, pcfg, root.child(STREAM_TRAIN_PAIRS, epoch, step))
            for step in range(steps)
        ]
    # One shuffled pass: consecutive chunks of N videos, incomplete tail dropped.
    order = root.child(STREAM_SHUFFLE, epoch).permutation(len(train_sets))
    return [
        make_batch(
            [train_sets[i] for i in order[step * n : (step + 1) * n]],
            n,
            pcfg,
            root.child(STREAM_TRAIN_PAIRS, epoch, step),
        )
        for step in range(steps)
    ]


def pretrain(cfg: RunConfig, clips: Sequence[VideoClip] | None = None) -> PretrainResult:
    """
    Pre-train one model and write its checkpoint and epoch log.

    Args:
        cfg: the run configuration
        clips: corpus to use instead of the one ``cfg`` describes

    Raises:
        PairGenerationError: fewer than ``batch_size`` usable training videos,
            or fewer than two validation videos
        CheckpointError: output directory not writable
    """
    output = Path(cfg.output_dir)
    try:
        output.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CheckpointError(f"cannot create output directory {output}: {e}") from e

    corpus = list(clips) if clips is not None else load_corpus(cfg)
    frame_sets = extract_frame_sets(corpus, cfg.samples_per_second)
    root = Rng(cfg.seed)
    pcfg = cfg.pair_config()
    ocfg = cfg.optim_config()
    train_sets, valid_sets = split_by_video(frame_sets, cfg.split_ratio, root.child(STREAM_SPLIT))
    train_sets = eligible_frame_sets(train_sets, pcfg)
    valid_sets = eligible_frame_sets(valid_sets, pcfg)

    n = cfg.batch_size
    if len(train_sets) < n:
        raise PairGenerationError(
            f"batch size {n} needs at least {n} usable training videos, have {len(train_sets)}"
        )
    if len(valid_sets) < 2:
        raise PairGenerationError(
            f"need at least 2 usable validation videos, have {len(valid_sets)}"
        )
    n_valid = min(n, len(valid_sets))
    steps = cfg.steps_per_epoch or max(1, len(train_sets) // n)

    logger.info(
        f"Pre-training {ocfg.mode.value}/{pcfg.strategy.value}: {len(train_sets)} train / "
        f"{len(valid_sets)} valid videos, {cfg.epochs} epochs x {steps} steps, N = {n}"
    )

    state = init_state(cfg.arch_config(), ocfg.mode, root.child(STREAM_INIT))
    records: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        results: list[StepResult] = []
        for step, batch in enumerate(_epoch_batches(train_sets, cfg, pcfg, root, epoch, steps)):
            if ocfg.mode == TrainMode.META:
                valid_batch = make_batch(
                    valid_sets, n_valid, pcfg, root.child(STREAM_VALID_PAIRS, epoch, step)
                )
                state, result = meta_train_step(state, batch, valid_batch, ocfg)
            else:
                state, result = plain_train_step(state, batch, ocfg)
            results.append(result)

        weights = np.concatenate([r.weights for r in results])
        meta = ocfg.mode == TrainMode.META
        record = EpochRecord(
            epoch=epoch + 1,
            steps=len(results),
            train_loss=float(np.mean([r.train_loss for r in results])),
            weighted_loss=float(np.mean([r.weighted_loss for r in results])),
            valid_loss=_eval_loss(
                state, valid_sets, n_valid, pcfg, ocfg.tau, root.child(STREAM_EVAL, epoch)
            ),
            weight_mean=float(weights.mean()) if meta else None,
            weight_std=float(weights.std()) if meta else None,
        )
        records.append(record)
        logger.info(
            f"Epoch {record.epoch}/{cfg.epochs}: train {record.train_loss:.5f} "
            f"valid {record.valid_loss:.5f}"
            + (f" w {record.weight_mean:.4f} ± {record.weight_std:.4f}" if meta else "")
        )

    checkpoint = Checkpoint.from_state(state, cfg)
    checkpoint_path = save_checkpoint(checkpoint, output / CHECKPOINT_NAME)
    log_path = write_csv(output / EPOCH_LOG_NAME, EPOCH_HEADER, (r.row() for r in records))
    if cfg.export_metrics:
        write_metrics(output / METRICS_NAME)
    return PretrainResult(
        checkpoint=checkpoint,
        checkpoint_path=checkpoint_path,
        log_path=log_path,
        epochs=records,
        state=state,
    )


# Experiments


def _probe(cfg: RunConfig, ckpt: Checkpoint, clips: Sequence[VideoClip]) -> ProbeReport:
    return linear_probe(
        ckpt,
        clips,
        epochs=cfg.probe_epochs,
        lr=cfg.probe_lr,
        test_ratio=cfg.test_ratio,
        seed=cfg.seed,
        samples_per_second=cfg.samples_per_second,
    )


def _run_cells(
    cells: list[tuple[str, RunConfig]],
    clips: Sequence[VideoClip] | None,
    max_workers: int,
) -> list[ExperimentRow]:
    corpora: dict[int, list[VideoClip]] = {}

    def corpus_for(run: RunConfig) -> list[VideoClip]:
        if clips is not None:
            return list(clips)
        # One corpus per seed, shared by every cell of that seed.
        if run.seed not in corpora:
            corpora[run.seed] = load_corpus(run)
        return corpora[run.seed]

    for _, run in cells:
        corpus_for(run)

    def run_cell(cell: tuple[str, RunConfig]) -> ExperimentRow:
        label, run = cell
        corpus = corpus_for(run)
        result = pretrain(run, corpus)
        report = _probe(run, result.checkpoint, corpus)
        logger.info(f"{label} seed {run.seed}: accuracy {report.accuracy:.4f}")
        return ExperimentRow(label, run.strategy, run.mode, run.seed, report)

    if max_workers <= 1:
        return [run_cell(c) for c in cells]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run_cell, cells))


def ablate(
    cfg: RunConfig,
    seeds: Sequence[int],
    rungs: Sequence[str] = LADDER,
    clips: Sequence[VideoClip] | None = None,
    max_workers: int = 1,
) -> list[ExperimentRow]:
    """
    Pre-train and probe every (rung, seed) cell with everything else fixed,
    then write ``ablation.csv``. Rows come out in ladder order, then seed
    order, whatever ``max_workers`` is.
    """
    unknown = [r for r in rungs if r not in RUNGS]
    if unknown:
        raise ConfigError(f"unknown ablation rung(s): {', '.join(unknown)}")
    if not seeds:
        raise ConfigError("ablation needs at least one seed")
    base = Path(cfg.output_dir)
    cells = [
        (
            rung,
            cfg.with_values(
                strategy=RUNGS[rung][0].value,
                mode=RUNGS[rung][1].value,
                seed=seed,
                output_dir=str(base / f"{rung.replace('+', '_')}_seed{seed}"),
            ),
        )
        for rung in rungs
        for seed in sorted(set(seeds))
    ]
    rows = _run_cells(cells, clips, max_workers)
    write_csv(
        base / "ablation.csv",
        ABLATION_HEADER,
        ([r.label, r.strategy, r.mode, r.seed, r.report.accuracy, r.report.macro_f1] for r in rows),
    )
    for rung in rungs:
        accuracies = [r.report.accuracy for r in rows if r.label == rung]
        logger.info(f"{rung}: mean accuracy {np.mean(accuracies):.4f} over {len(accuracies)} seeds")
    return rows


def sweep(
    cfg: RunConfig,
    key: str,
    values: Sequence[str],
    seeds: Sequence[int],
    clips: Sequence[VideoClip] | None = None,
    max_workers: int = 1,
) -> list[ExperimentRow]:
    """Pre-train and probe once per (value, seed) of one config key; writes ``sweep_<key>.csv``."""
    if key in UNSWEEPABLE:
        raise ConfigError(f"{key!r} cannot be swept")
    if not values or not seeds:
        raise ConfigError("sweep needs at least one value and one seed")
    base = Path(cfg.output_dir)
    cells = []
    for value in values:
        typed = parse_values({key: value})
        for seed in sorted(set(seeds)):
            run = cfg.with_values(
                seed=seed, output_dir=str(base / f"{key}_{value}_seed{seed}"), **typed
            )
            cells.append((value, run))
    rows = _run_cells(cells, clips, max_workers)
    write_csv(
        base / f"sweep_{key}.csv",
        SWEEP_HEADER,
        ([key, r.label, r.seed, r.report.accuracy, r.report.macro_f1] for r in rows),
    )
    return rows
