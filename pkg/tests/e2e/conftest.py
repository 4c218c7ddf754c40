"""
Pytest configuration for the end-to-end suite.

CLI tests run ``python -m uscl.cli`` in a subprocess, the way an operator
would; acceptance experiments call the services in-process.
"""

import os
import subprocess
import sys
from pathlib import Path
from typing import Callable, Generator

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]

# A corpus and network small enough that a pretrain takes a few seconds.
SMALL_CONFIG = """\
# small end-to-end run
n_videos = 12
frames_per_video = 24
image_size = 16
conv_channels = 4
repr_dim = 8
proj_dim = 4
cmw_hidden = 8
batch_size = 4
epochs = 2
probe_epochs = 10
"""


@pytest.fixture(scope="session", autouse=True)
def django_setup() -> None:
    """Configure Django once for in-process tests."""
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "muscl.settings")
    import django

    django.setup()


@pytest.fixture
def output_dir(tmp_path: Path) -> Path:
    """
    Fresh output directory for one test.

    Returns:
        Path: empty directory under pytest's tmp_path
    """
    path = tmp_path / "runs"
    path.mkdir()
    return path


@pytest.fixture
def small_config(tmp_path: Path) -> Path:
    """
    Config file for a small synthetic run.

    Returns:
        Path: ``key = value`` file with SMALL_CONFIG
    """
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG, encoding="utf-8")
    return path


@pytest.fixture
def muscl(output_dir: Path) -> Generator[Callable[..., subprocess.CompletedProcess], None, None]:
    """
    Run ``muscl <args>`` in a subprocess from the repository root.

    MUSCL_OUTPUT_DIR points at the test's output directory, so commands that
    are not given ``--output-dir`` still write there.

    Yields:
        Callable: ``muscl(*args)`` returning the CompletedProcess (text mode)
    """
    env = os.environ.copy()
    env["DJANGO_SETTINGS_MODULE"] = "muscl.settings"
    env["MUSCL_OUTPUT_DIR"] = str(output_dir)

    def run(*args: str) -> subprocess.CompletedProcess:
        return subprocess.run(
            [sys.executable, "-m", "uscl.cli", *args],
            cwd=REPO_ROOT,
            env=env,
            capture_output=True,
            text=True,
            timeout=600,
            check=False,
        )

    yield run
