import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-regsimagg-lab-local-key')

DEBUG = os.environ.get('DJANGO_DEBUG', '0') == '1'

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'federation',  # Federation simulator
]

# Database (experiment run registry)
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('FEDSIM_DATABASE', BASE_DIR / 'db.sqlite3'),
    }
}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Default primary key field type
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Federation defaults, used for any field an experiment config leaves out
FEDERATION = {
    'OUTPUT_ROOT': Path(os.environ.get('FEDSIM_OUTPUT_ROOT', BASE_DIR / 'runs')),
    'CONFIG_DIR': BASE_DIR / 'configs',
    'ROUNDS': 20,
    'EVAL_EVERY': 1,
    'CHECKPOINT_EVERY': 5,
    'VALIDATION_FRACTION': 0.1,
    'ACCURACY_THRESHOLD': 0.8,
    'WINDOW_FRACTION': 0.2,
    'STRATEGY': 'regsimagg',
    'EPSILON': 1e-5,
    'REGULARIZATION_START_ROUND': 10,
    'LEARNING_RATE': 5e-5,
    'EPOCHS_PER_ROUND': 1.0,
    'BATCH_SIZE': 16,
}

# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'federation': {
            'handlers': ['console'],
            'level': os.environ.get('FEDSIM_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
