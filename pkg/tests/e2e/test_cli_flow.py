"""
E2E tests for the command-line workflow.

A run goes gen-data -> pretrain -> probe / finetune -> exports, with every
step reading the previous step's files, plus the exit-code contract.
"""

import csv
import json
from pathlib import Path

import pytest


def read_rows(path: Path) -> list[list[str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.mark.cli
def test_full_workflow_on_disk_corpus(muscl, small_config: Path, output_dir: Path) -> None:
    """
    Test: generate a corpus, pre-train on it from disk, then evaluate and export.

    Workflow:
    1. gen-data writes the corpus in the loader layout
    2. pretrain --corpus DIR writes checkpoint.ckpt and epochs.csv
    3. probe and finetune print JSON reports
    4. the three exports write CSV files with their fixed headers
    """
    corpus = output_dir / "corpus"
    result = muscl("gen-data", "--config", str(small_config), "--out", str(corpus))
    assert result.returncode == 0, result.stderr
    assert len([p for p in corpus.iterdir() if p.is_dir()]) == 12

    run_dir = output_dir / "meta"
    result = muscl(
        "pretrain", "--config", str(small_config), "--corpus", str(corpus),
        "--seed", "1", "--output-dir", str(run_dir),
    )
    assert result.returncode == 0, result.stderr
    assert "Checkpoint written to" in result.stdout
    checkpoint = run_dir / "checkpoint.ckpt"
    epochs = read_rows(run_dir / "epochs.csv")
    assert [row[0] for row in epochs[1:]] == ["1", "2"]

    result = muscl("probe", "--checkpoint", str(checkpoint))
    assert result.returncode == 0, result.stderr
    report = json.loads(result.stdout)
    assert 0.0 <= report["accuracy"] <= 1.0
    assert len(report["confusion"]) == 2

    tuned = output_dir / "tuned.ckpt"
    result = muscl("finetune", "--checkpoint", str(checkpoint), "--save", str(tuned))
    assert result.returncode == 0, result.stderr
    assert tuned.is_file()

    weights = output_dir / "weights.csv"
    assert muscl("export-weights", "--checkpoint", str(checkpoint), "--out", str(weights)).returncode == 0
    assert read_rows(weights)[0] == ["video_id", "tag", "frame_indices", "xi1", "xi2", "weight"]
    assert len(read_rows(weights)) == 1 + 12

    embeddings = output_dir / "h.csv"
    assert muscl("export-embeddings", "--checkpoint", str(checkpoint), "--out", str(embeddings)).returncode == 0
    # 24 frames at 23 fps sampled every 7th frame: 4 frames per video.
    assert len(read_rows(embeddings)) == 1 + 12 * 4

    similarity = output_dir / "sim.csv"
    assert muscl("export-similarity", "--checkpoint", str(checkpoint), "--out", str(similarity)).returncode == 0
    assert len(read_rows(similarity)) == 1 + 12 * 3


@pytest.mark.cli
def test_plain_checkpoint_cannot_export_weights(muscl, small_config: Path, output_dir: Path) -> None:
    """Test: a plain-mode checkpoint has no weighting net, so export-weights exits 2."""
    run_dir = output_dir / "plain"
    result = muscl(
        "pretrain", "--config", str(small_config), "--seed", "0",
        "--mode", "plain", "--strategy", "s1", "--output-dir", str(run_dir),
    )
    assert result.returncode == 0, result.stderr

    result = muscl(
        "export-weights", "--checkpoint", str(run_dir / "checkpoint.ckpt"),
        "--out", str(output_dir / "w.csv"),
    )
    assert result.returncode == 2
    assert "plain mode" in result.stderr


@pytest.mark.cli
def test_output_dir_from_environment(muscl, small_config: Path, output_dir: Path) -> None:
    """Test: without --output-dir, pretrain writes to MUSCL_OUTPUT_DIR."""
    result = muscl("pretrain", "--config", str(small_config), "--seed", "2", "--epochs", "1")
    assert result.returncode == 0, result.stderr
    assert (output_dir / "checkpoint.ckpt").is_file()


@pytest.mark.cli
def test_ablate_and_sweep_tables(muscl, small_config: Path, output_dir: Path) -> None:
    """Test: ablate and sweep write one row per cell."""
    ablation_dir = output_dir / "ablation"
    result = muscl(
        "ablate", "--config", str(small_config), "--epochs", "1",
        "--seeds", "0,1", "--rungs", "simclr,meta+s3", "--output-dir", str(ablation_dir),
    )
    assert result.returncode == 0, result.stderr
    rows = read_rows(ablation_dir / "ablation.csv")
    assert [r[0] for r in rows[1:]] == ["simclr", "simclr", "meta+s3", "meta+s3"]

    sweep_dir = output_dir / "sweep"
    result = muscl(
        "sweep", "--config", str(small_config), "--epochs", "1", "--key", "crop_min_ratio",
        "--values", "0.6,0.9", "--seeds", "0", "--output-dir", str(sweep_dir),
    )
    assert result.returncode == 0, result.stderr
    rows = read_rows(sweep_dir / "sweep_crop_min_ratio.csv")
    assert [r[:2] for r in rows[1:]] == [["crop_min_ratio", "0.6"], ["crop_min_ratio", "0.9"]]


@pytest.mark.cli
@pytest.mark.parametrize(
    "args, code",
    [
        ((), 1),
        (("--help",), 0),
        (("train",), 1),
        (("pretrain",), 1),
        (("pretrain", "--seed", "0", "--no-such-key", "1"), 1),
        (("pretrain", "--seed", "0", "--epochs", "zero"), 1),
        (("probe", "--checkpoint", "does/not/exist.ckpt"), 2),
    ],
)
def test_exit_codes(muscl, args: tuple[str, ...], code: int) -> None:
    """Test: usage errors exit 1, runtime errors exit 2, success exits 0."""
    assert muscl(*args).returncode == code
