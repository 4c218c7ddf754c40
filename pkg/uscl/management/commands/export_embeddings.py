from typing import Any

from django.core.management.base import CommandParser

from ...services.exports import export_embeddings
from ...services.pretraining import load_corpus
from ._base import CheckpointCommand


class Command(CheckpointCommand):
    help = "Export the representation h of every frame-set frame to CSV"

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--out", required=True, help="CSV file to write")
        super().add_arguments(parser)

    def run(self, **options: Any) -> None:
        ckpt, cfg = self.load(options)
        path = export_embeddings(ckpt, load_corpus(cfg), options["out"])
        self.stdout.write(self.style.SUCCESS(f"Embeddings written to {path}"))
