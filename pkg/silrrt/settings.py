from pathlib import Path
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

# Environment-based configuration
DJANGO_ENV = os.getenv('DJANGO_ENV', 'development')
DEBUG = os.getenv("DEBUG", "False") == "True"

SECRET_KEY = os.getenv('SECRET_KEY', 'silrrt-workbench-insecure-development-key')

ALLOWED_HOSTS = [h for h in os.getenv("ALLOWED_HOSTS", "localhost,127.0.0.1,testserver").split(",") if h]

# Workbench configuration
SILRRT_CONFIG = {
    'THREADS': int(os.getenv('SILRRT_THREADS', '0')) or os.cpu_count() or 1,
    'ANGULAR_WEIGHT': float(os.getenv('SILRRT_ANGULAR_WEIGHT', '1.0')),
    'COLLISION_STEP': float(os.getenv('SILRRT_COLLISION_STEP', '0.1')),
    'TRAIN_DTYPE': os.getenv('SILRRT_TRAIN_DTYPE', 'float64'),
    'DATA_DIR': Path(os.getenv('SILRRT_DATA_DIR', BASE_DIR / 'runs')),
    'PRESET': os.getenv('SILRRT_PRESET', 'desk'),
}

INSTALLED_APPS = [
    'bench',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.middleware.common.CommonMiddleware',
]

ROOT_URLCONF = 'silrrt.urls'

TEMPLATES = []

WSGI_APPLICATION = 'silrrt.wsgi.application'

# Nothing is persisted in a database; datasets and checkpoints live in SILRRT_DATA_DIR
DATABASES = {}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LOG_LEVEL = os.getenv('SILRRT_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'services': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'bench': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}
