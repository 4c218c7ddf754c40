from typing import Any

from django.core.management.base import CommandParser

from ...services.pretraining import LADDER, RUNGS, ablate
from ._base import RunCommand, add_seed_list_arguments, resolve_seeds


class Command(RunCommand):
    """
    The pair-strategy ladder: pre-train and probe every (rung, seed) cell on
    the same corpus and augmentations, then write ``ablation.csv`` to the
    output directory with one row per cell.
    """

    help = "Run the simclr / s1 / s2 / s3 / meta+s3 ladder over shared seeds"

    def add_arguments(self, parser: CommandParser) -> None:
        add_seed_list_arguments(parser)
        parser.add_argument(
            "--rungs",
            default=",".join(LADDER),
            help=f"comma-separated rungs out of {', '.join(RUNGS)} (default: {','.join(LADDER)})",
        )
        parser.add_argument("--workers", type=int, default=1, help="cells run in parallel")
        super().add_arguments(parser)

    def run(self, **options: Any) -> None:
        cfg = self.run_config(options)
        seeds = resolve_seeds(options, cfg.seed)
        rungs = [r.strip() for r in options["rungs"].split(",") if r.strip()]
        self.stdout.write(
            self.style.MIGRATE_HEADING(
                f"Ablation: {len(rungs)} rungs x {len(seeds)} seeds into {cfg.output_dir}"
            )
        )
        rows = ablate(cfg, seeds, rungs, max_workers=options["workers"])

        for rung in rungs:
            accuracies = [r.report.accuracy for r in rows if r.label == rung]
            self.stdout.write(f"  {rung:<12} mean accuracy {sum(accuracies) / len(accuracies):.4f}")
        self.stdout.write(self.style.SUCCESS(f"Ablation table written with {len(rows)} rows"))
