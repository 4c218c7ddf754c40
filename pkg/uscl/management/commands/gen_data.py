from pathlib import Path
from typing import Any

from django.core.management.base import CommandParser

from ...data import CORRUPTED_TAG, generate_synthetic_corpus, write_corpus_to_disk
from ._base import RunCommand


class Command(RunCommand):
    """
    Render the synthetic corpus described by the run configuration and write
    it in the on-disk layout that ``--corpus DIR`` reads back.
    """

    help = "Generate a synthetic video corpus and write it to disk"

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--out", help="target directory (default: <output_dir>/corpus)")
        parser.add_argument(
            "--workers", type=int, default=1, help="render videos in this many threads"
        )
        super().add_arguments(parser)

    def run(self, **options: Any) -> None:
        cfg = self.run_config(options)
        target = Path(options["out"] or Path(cfg.output_dir) / "corpus")

        self.stdout.write(f"Rendering {cfg.n_videos} videos (seed {cfg.seed})...")
        clips = generate_synthetic_corpus(cfg.synth_config(), max_workers=options["workers"])
        write_corpus_to_disk(clips, target)

        corrupted = sum(1 for c in clips if c.tag == CORRUPTED_TAG)
        self.stdout.write(
            self.style.SUCCESS(
                f"Wrote {len(clips)} videos ({corrupted} corrupted) to {target}"
            )
        )
