"""
Django settings for unitax_project project.

The project has no web surface: it exists to host the ``taxonomy`` app, its
management commands (the pipeline CLI) and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-unitax-local-only')

DEBUG = os.environ.get('DJANGO_DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'taxonomy',  # Universal taxonomy reconciliation
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [],
        },
    },
]


# Database
# Nothing is persisted in a database; artifacts are plain files handed from one
# command to the next. SQLite keeps the test runner and `manage.py check` happy.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}


# Internationalization
# https://docs.djangoproject.com/en/4.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Pipeline defaults. Every command flag falls back to these values.
def _optional_int(value):
    return int(value) if value not in (None, '') else None


UNITAX = {
    'TOP_K': int(os.environ.get('UNITAX_TOP_K', '8')),
    'MAX_IMAGES': _optional_int(os.environ.get('UNITAX_MAX_IMAGES')),
    'MIN_SUPPORT': float(os.environ.get('UNITAX_MIN_SUPPORT', '0.0')),
    'WORKERS': int(os.environ.get('UNITAX_WORKERS', '1')),
    'SEED': int(os.environ.get('UNITAX_SEED', '0')),
    'CHUNK_PIXELS': int(os.environ.get('UNITAX_CHUNK_PIXELS', '65536')),
}


# Logging configuration
LOG_DIR = Path(os.environ.get('UNITAX_LOG_DIR', BASE_DIR / 'log'))
LOG_DIR.mkdir(parents=True, exist_ok=True) # Ensure log directory exists

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {asctime} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'level': os.environ.get('UNITAX_CONSOLE_LOG_LEVEL', 'WARNING'),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
        'file': {
            'level': 'DEBUG',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': LOG_DIR / 'unitax.log',
            'maxBytes': 1024*1024*5, # 5 MB
            'backupCount': 5,
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': True,
        },
        'taxonomy': { # Our app logger
            'handlers': ['console', 'file'],
            'level': 'DEBUG',
            'propagate': False,
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': 'INFO',
    },
}
