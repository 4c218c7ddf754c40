from typing import Any

from django.core.management.base import CommandParser

from ...services.pretraining import sweep
from ._base import RunCommand, add_seed_list_arguments, resolve_seeds


class Command(RunCommand):
    """
    Vary one config key: pre-train and probe once per (value, seed) and write
    ``sweep_<key>.csv`` to the output directory.

    Example: ``sweep --key crop_min_ratio --values 0.6,0.7,0.8,0.85,0.9 --seeds 0,1,2``
    or, equivalently, ``--seed 0 --n-seeds 3``
    """

    help = "Hyperparameter sweep over one config key"

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--key", required=True, help="config key to vary")
        parser.add_argument(
            "--values",
            required=True,
            help="values to try, separated by '|' when a value itself contains commas, else by ','",
        )
        add_seed_list_arguments(parser)
        parser.add_argument("--workers", type=int, default=1, help="cells run in parallel")
        super().add_arguments(parser)

    def run(self, **options: Any) -> None:
        cfg = self.run_config(options)
        raw = options["values"]
        separator = "|" if "|" in raw else ","
        values = [v.strip() for v in raw.split(separator) if v.strip()]
        seeds = resolve_seeds(options, cfg.seed)
        key = options["key"]

        self.stdout.write(
            self.style.MIGRATE_HEADING(f"Sweep of {key}: {len(values)} values x {len(seeds)} seeds")
        )
        rows = sweep(cfg, key, values, seeds, max_workers=options["workers"])
        for value in values:
            accuracies = [r.report.accuracy for r in rows if r.label == value]
            self.stdout.write(f"  {key}={value:<10} mean accuracy {sum(accuracies) / len(accuracies):.4f}")
        self.stdout.write(self.style.SUCCESS(f"Sweep table written with {len(rows)} rows"))
