import json
from typing import Any

from ...services.evaluation import linear_probe
from ...services.pretraining import load_corpus
from ._base import CheckpointCommand


class Command(CheckpointCommand):
    """
    Linear probe of a checkpoint's frozen encoder. The corpus, seed and probe
    settings default to the checkpoint's run echo; flags override them.
    """

    help = "Train a linear classifier on frozen representations and print the report as JSON"

    def run(self, **options: Any) -> None:
        ckpt, cfg = self.load(options)
        report = linear_probe(
            ckpt,
            load_corpus(cfg),
            epochs=cfg.probe_epochs,
            lr=cfg.probe_lr,
            test_ratio=cfg.test_ratio,
            seed=cfg.seed,
            samples_per_second=cfg.samples_per_second,
        )
        self.stdout.write(json.dumps(report.to_dict(), indent=2))
