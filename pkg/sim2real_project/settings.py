import os
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('SIM2REAL_SECRET_KEY', 'sim2real-local-only-no-web-surface')

DEBUG = False

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'expressions',
]

# Run state lives in run directories, not in a database.
DATABASES = {}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

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
        'expressions': {
            'handlers': ['console'],
            'level': os.environ.get('SIM2REAL_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}

SIM2REAL = {
    'DEFAULT_SEED': 0,
    'SYNTHETIC_NOISE': {
        'additive_sigma': 0.02,
        'jitter_frames': 1,
        'drift_amplitude': 0.0,
        'occlusion_prob': 0.0,
    },
    'REAL_NOISE': {
        'additive_sigma': 0.05,
        'jitter_frames': 2,
        'drift_amplitude': 0.05,
        'occlusion_prob': 0.05,
    },
    'AUGMENT': {
        'amplitude_scale_range': [0.85, 1.15],
        'noise_sigma': 0.01,
        'max_time_shift': 2,
        'channel_dropout_prob': 0.05,
    },
    'TRAIN': {
        'learning_rate': 1e-4,
        'finetune_learning_rate': 1e-4,
        'batch_size': 8,
        'pretrain_epochs': 20,
        'finetune_epochs': 50,
    },
}
