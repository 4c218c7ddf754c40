from typing import Any

from ...services.pretraining import pretrain
from ._base import RunCommand


class Command(RunCommand):
    """
    Pre-train an encoder.

    Writes ``checkpoint.ckpt`` and ``epochs.csv`` (plus ``metrics.prom`` with
    ``--export-metrics true``) to the output directory.
    """

    help = "Contrastive pre-training with the configured pair strategy and mode"
    requires_seed = True

    def run(self, **options: Any) -> None:
        cfg = self.run_config(options)
        self.stdout.write(
            self.style.MIGRATE_HEADING(
                f"Pre-training: strategy={cfg.strategy} mode={cfg.mode} seed={cfg.seed}"
            )
        )
        result = pretrain(cfg)

        last = result.epochs[-1]
        self.stdout.write(
            f"  {len(result.epochs)} epochs, final train loss {last.train_loss:.5f}, "
            f"valid loss {last.valid_loss:.5f}"
        )
        self.stdout.write(f"  log: {result.log_path}")
        self.stdout.write(self.style.SUCCESS(f"Checkpoint written to {result.checkpoint_path}"))
