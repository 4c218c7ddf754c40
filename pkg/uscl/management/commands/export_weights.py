from typing import Any

from django.core.management.base import CommandError, CommandParser

from ...services.exports import export_weights
from ...services.pretraining import load_corpus
from ._base import CheckpointCommand


class Command(CheckpointCommand):
    help = "Export weighting-net scores of generated pairs to CSV (meta checkpoints only)"

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--out", required=True, help="CSV file to write")
        parser.add_argument(
            "--passes", type=int, default=1, help="pairs generated per video (default 1)"
        )
        super().add_arguments(parser)

    def run(self, **options: Any) -> None:
        ckpt, cfg = self.load(options)
        if options["passes"] < 1:
            raise CommandError("--passes must be at least 1")
        path = export_weights(
            ckpt, load_corpus(cfg), options["out"], seed=cfg.seed, passes=options["passes"]
        )
        self.stdout.write(self.style.SUCCESS(f"Pair weights written to {path}"))
