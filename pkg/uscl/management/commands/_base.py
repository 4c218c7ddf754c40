"""
Shared plumbing for the uscl management commands.

Every command accepts ``--config FILE`` plus one ``--key-name VALUE`` flag
per key in ``CONFIG_KEYS``. Library errors are translated to
``CommandError``: configuration problems exit 1 like any other usage error,
everything else exits 2.
"""

import logging
import sys
from pathlib import Path
from typing import Any

from django.core.management.base import BaseCommand, CommandError, CommandParser

from ...checkpoint import Checkpoint, load_checkpoint
from ...config import CONFIG_KEYS, RunConfig, build_run_config
from ...exceptions import ConfigError, USCLError

USAGE_ERROR = 1
RUNTIME_ERROR = 2

# Django --verbosity -> level of the "uscl" logger
LOG_LEVELS = {0: logging.ERROR, 1: logging.INFO, 2: logging.INFO, 3: logging.DEBUG}


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def parse_int_list(raw: str) -> list[int]:
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        raise CommandError(f"expected comma-separated integers, got {raw!r}") from e


def add_seed_list_arguments(parser: CommandParser) -> None:
    parser.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2,3,4")
    parser.add_argument(
        "--n-seeds",
        type=int,
        default=1,
        help="without --seeds, run seeds --seed .. --seed + N - 1 (default: 1)",
    )


def resolve_seeds(options: dict[str, Any], base_seed: int) -> list[int]:
    """An explicit --seeds list wins; otherwise N consecutive seeds from --seed."""
    if options.get("seeds"):
        seeds = parse_int_list(options["seeds"])
    else:
        n_seeds = options.get("n_seeds") or 0
        if n_seeds < 1:
            raise CommandError(f"--n-seeds must be at least 1, got {n_seeds}")
        seeds = list(range(base_seed, base_seed + n_seeds))
    if not seeds:
        raise CommandError("no seeds given")
    return seeds


class RunCommand(BaseCommand):
    """Base class: config flags, verbosity wiring and error translation."""

    requires_system_checks: list[str] = []
    # Training commands must be given --seed explicitly.
    requires_seed = False

    def create_parser(self, prog_name: str, subcommand: str, **kwargs: Any) -> CommandParser:
        # Parse errors become CommandError (exit 1) instead of argparse's exit 2.
        self._called_from_command_line = False
        return super().create_parser(prog_name, subcommand, **kwargs)

    def run_from_argv(self, argv: list[str]) -> None:
        try:
            super().run_from_argv(argv)
        except CommandError as e:
            # Raised while parsing, before Django's own handler is in place.
            self.stderr.write(f"CommandError: {e}")
            sys.exit(e.returncode)

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--config", help="key = value run configuration file")
        for key, entry in CONFIG_KEYS.items():
            if key == "seed":
                parser.add_argument(
                    "--seed",
                    dest="seed",
                    required=self.requires_seed,
                    help=entry.help + (" (required)" if self.requires_seed else ""),
                )
                continue
            parser.add_argument(flag_name(key), dest=key, metavar="VALUE", help=entry.help)

    def handle(self, *args: Any, **options: Any) -> None:
        logging.getLogger("uscl").setLevel(LOG_LEVELS.get(options["verbosity"], logging.INFO))
        try:
            self.run(**options)
        except ConfigError as e:
            raise CommandError(str(e), returncode=USAGE_ERROR) from e
        except USCLError as e:
            raise CommandError(str(e), returncode=RUNTIME_ERROR) from e

    def run(self, **options: Any) -> None:
        raise NotImplementedError("subclasses of RunCommand must provide a run() method")

    # Helpers

    def run_config(self, options: dict[str, Any], base: RunConfig | None = None) -> RunConfig:
        overrides = {key: options.get(key) for key in CONFIG_KEYS}
        return build_run_config(options.get("config"), overrides, base=base)


class CheckpointCommand(RunCommand):
    """A command that reads a checkpoint; its run echo is the base config."""

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--checkpoint", required=True, help="checkpoint file to read")
        super().add_arguments(parser)

    def load(self, options: dict[str, Any]) -> tuple[Checkpoint, RunConfig]:
        ckpt = load_checkpoint(Path(options["checkpoint"]))
        return ckpt, self.run_config(options, base=ckpt.run)
