"""
Command-line entry point.

``muscl <subcommand> [options]`` maps hyphenated subcommands onto the uscl
management commands (``export-weights`` -> ``export_weights``), so the two
spellings below are equivalent::

    muscl pretrain --config run.cfg --seed 7
    python manage.py pretrain --config run.cfg --seed 7

Exit codes: 0 on success, 1 on a usage error (bad flag, unknown config key,
missing config file, missing --seed), 2 on a runtime error.
"""

import os
import sys
from typing import Sequence

SUBCOMMANDS = (
    "gen-data",
    "pretrain",
    "probe",
    "finetune",
    "export-weights",
    "export-embeddings",
    "export-similarity",
    "ablate",
    "sweep",
)

USAGE = "usage: muscl {" + ",".join(SUBCOMMANDS) + "} [options]\n"


def _setup() -> None:
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "muscl.settings")
    import django

    django.setup()


def cli(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code instead of exiting."""
    args = list(sys.argv[1:] if argv is None else argv)
    if not args or args[0] in ("-h", "--help"):
        sys.stdout.write(USAGE)
        return 0 if args else 1
    name = args[0]
    if name not in SUBCOMMANDS:
        sys.stderr.write(f"unknown subcommand {name!r}\n{USAGE}")
        return 1

    _setup()
    from django.core.management import load_command_class

    command = load_command_class("uscl", name.replace("-", "_"))
    try:
        command.run_from_argv(["muscl", name.replace("-", "_"), *args[1:]])
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else (0 if e.code is None else 1)
    return 0


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
