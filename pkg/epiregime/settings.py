import os
from pathlib import Path

import dj_database_url
from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(os.path.join(BASE_DIR, ".env"))

SECRET_KEY = os.getenv("EPIREGIME_SECRET_KEY", "epiregime-local-only-not-served")

DEBUG = os.getenv("EPIREGIME_DEBUG", "False").lower() in ["true", "1", "yes"]

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "core",
    "params",
    "hsmm",
    "dynamics",
    "observation",
    "filters",
    "inference_batch",
    "inference_seq",
    "forecast",
    "comparison",
    "simulate",
    "data_io",
    "cli",
]

# Database
# Only the run registry (cli.RunManifest) lives in the database.

DATABASES = {
    "default": dj_database_url.config(
        default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}",
        conn_max_age=0,
    )
}

TIME_ZONE = "UTC"

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Model configuration

# Default model-config JSON used when a subcommand gets no --config
EPIREGIME_CONFIG = os.getenv("EPIREGIME_CONFIG")

EPIREGIME_THREADS = int(os.getenv("EPIREGIME_THREADS", os.cpu_count() or 1))

# "local" runs chains in a thread pool, "celery" dispatches them as a group
EPIREGIME_BACKEND = os.getenv("EPIREGIME_BACKEND", "local")

# Mirror every manifest.json into cli.RunManifest
EPIREGIME_RECORD_RUNS = os.getenv("EPIREGIME_RECORD_RUNS", "True").lower() in ["true", "1", "yes"]

# Float format for every CSV the commands write
EPIREGIME_FLOAT_FORMAT = "%.10g"

# Celery Configuration
CELERY_BROKER_URL = os.getenv("CELERY_BROKER_URL", "redis://localhost:6379/0")
CELERY_RESULT_BACKEND = os.getenv("CELERY_RESULT_BACKEND", CELERY_BROKER_URL)
CELERY_ACCEPT_CONTENT = ["json"]
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"
CELERY_TIMEZONE = TIME_ZONE
CELERY_BROKER_CONNECTION_RETRY_ON_STARTUP = True
CELERY_TASK_ALWAYS_EAGER = os.getenv("CELERY_TASK_ALWAYS_EAGER", "True").lower() in ["true", "1", "yes"]
CELERY_TASK_EAGER_PROPAGATES = True

# Logging
LOG_LEVEL = os.getenv("EPIREGIME_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "timestamped": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "timestamped",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": LOG_LEVEL,
    },
}
