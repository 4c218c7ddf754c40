import json
from dataclasses import replace
from typing import Any

from django.core.management.base import CommandParser

from ...checkpoint import save_checkpoint
from ...services.evaluation import finetune_params
from ...services.pretraining import load_corpus
from ._base import CheckpointCommand


class Command(CheckpointCommand):
    help = "Fine-tune the encoder head and a classifier, print the report as JSON"

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--save", help="also write the fine-tuned checkpoint here")
        super().add_arguments(parser)

    def run(self, **options: Any) -> None:
        ckpt, cfg = self.load(options)
        tuned, report = finetune_params(
            ckpt,
            load_corpus(cfg),
            epochs=cfg.probe_epochs,
            lr=cfg.probe_lr,
            test_ratio=cfg.test_ratio,
            seed=cfg.seed,
            samples_per_second=cfg.samples_per_second,
        )
        self.stdout.write(json.dumps(report.to_dict(), indent=2))
        if options["save"]:
            path = save_checkpoint(replace(ckpt, theta_m=tuned), options["save"])
            self.stdout.write(self.style.SUCCESS(f"Fine-tuned checkpoint written to {path}"))
