import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# The project has no web surface; the key only satisfies Django's checks.
SECRET_KEY = os.environ.get('INTERFERENCE_SECRET_KEY', 'interference-dr-local-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django_extensions',
    'core',
]


# Database
# Runs are recorded here only when a command is called with --record.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('INTERFERENCE_DB', BASE_DIR / 'db.sqlite3'),
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Default primary key field type

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': os.environ.get('INTERFERENCE_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Estimation defaults (see core/conf.py for the full list of keys)

INTERFERENCE = {
    'SEED': 20190101,
    'WORKERS': 1,
}
