"""
Django settings for vmsched project.

Process-level configuration comes from environment variables; run-level
configuration comes from the JSON config given to each management command.
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    "DJANGO_SECRET_KEY", "django-insecure-vmsched-local-development-key"
)

DEBUG = os.environ.get("DJANGO_DEBUG", "1") == "1"

_allowed_hosts = os.environ.get("ALLOWED_HOSTS", "*")
ALLOWED_HOSTS = (
    ["*"] if _allowed_hosts == "*" else [h.strip() for h in _allowed_hosts.split(",")]
)


# Application definition

INSTALLED_APPS = [
    "django.contrib.admin",
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "django.contrib.sessions",
    "django.contrib.messages",
    "django.contrib.staticfiles",
    # local apps
    "cluster",
    "traces",
    "schedulers",
    "learning",
    "simulation",
    "reports",
    "experiments",
]

MIDDLEWARE = [
    "django.middleware.security.SecurityMiddleware",
    "django.contrib.sessions.middleware.SessionMiddleware",
    "django.middleware.common.CommonMiddleware",
    "django.middleware.csrf.CsrfViewMiddleware",
    "django.contrib.auth.middleware.AuthenticationMiddleware",
    "django.contrib.messages.middleware.MessageMiddleware",
    "django.middleware.clickjacking.XFrameOptionsMiddleware",
]

ROOT_URLCONF = "vmsched.urls"

TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    },
]

WSGI_APPLICATION = "vmsched.wsgi.application"


# Database
# Run records live in sqlite; /app/data/db.sqlite3 when the Docker volume is mounted.

_db_path = os.environ.get("DATABASE_PATH")
if _db_path:
    _db_name = Path(_db_path)
else:
    _docker_data_path = Path("/app/data/db.sqlite3")
    if _docker_data_path.parent.exists():
        _db_name = _docker_data_path
    else:
        _db_name = BASE_DIR / "db.sqlite3"

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": _db_name,
    }
}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


# Static files (CSS, JavaScript, Images)

STATIC_URL = "static/"
STATIC_ROOT = BASE_DIR / "staticfiles"


# Logging
# VMSCHED_LOG_LEVEL is one of error, info, debug.

_log_level = os.environ.get("VMSCHED_LOG_LEVEL", "info").upper()
if _log_level not in ("ERROR", "INFO", "DEBUG"):
    _log_level = "INFO"

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "default",
        },
    },
    "loggers": {
        app: {"handlers": ["console"], "level": _log_level, "propagate": False}
        for app in ("cluster", "traces", "schedulers", "learning", "simulation", "reports", "experiments")
    },
}


# Celery Configuration
# https://docs.celeryq.dev/en/stable/index.html

CELERY_BROKER_URL = os.environ.get("CELERY_BROKER_URL", "pyamqp://guest@localhost//")
CELERY_TASK_ALWAYS_EAGER = os.environ.get("VMSCHED_CELERY_EAGER", "0") == "1"


# Experiment outputs

VMSCHED_DEFAULT_OUT = Path(os.environ.get("VMSCHED_DEFAULT_OUT", BASE_DIR / "runs"))
