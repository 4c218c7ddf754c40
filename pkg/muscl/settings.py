"""
Django settings for the muscl project.

The project has no database, no templates and no HTTP surface: Django is used
for its management-command framework and test runner. Everything a run needs
comes from the run configuration file and command-line flags (see
``uscl/config.py``). The only environment variable consulted is
``MUSCL_OUTPUT_DIR``, the default output directory for training commands.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Required by Django; nothing here is signed.
SECRET_KEY = "muscl-not-a-web-app"


# Application definition

INSTALLED_APPS = [
    "uscl",  # Contrastive pre-training app
]

# No database: every model lives in checkpoint files.
DATABASES: dict[str, dict[str, str]] = {}

USE_TZ = True

TIME_ZONE = "UTC"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# Output locations
# Flags and config files win over this; it only replaces the built-in default.
DEFAULT_OUTPUT_DIR = os.getenv("MUSCL_OUTPUT_DIR") or str(BASE_DIR / "runs")

# Checkpoint format
# Bump when the binary layout or the config blob schema changes.
CHECKPOINT_FORMAT_VERSION = 1


# Logging
# Management commands re-level the "uscl" logger from --verbosity.
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "uscl": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": False,
        },
    },
}
