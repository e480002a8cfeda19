"""
Django settings for ecdt_project project.

The project has no web surface: Django provides the settings layer, the app
registry, the management-command CLI and the test runner.

Every tunable below can be overridden from the environment or a .env file.
"""

from pathlib import Path
import os
from decouple import config, Csv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Management commands never sign anything, but Django refuses to start without a key.
SECRET_KEY = config('SECRET_KEY', default='ecdt-batch-only-not-a-secret')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'core.apps.CoreConfig',
    'clustering.apps.ClusteringConfig',
    'tracking.apps.TrackingConfig',
    'evaluation.apps.EvaluationConfig',
    'synthetic.apps.SyntheticConfig',
]

# Batch toolkit: nothing is persisted in a database.
DATABASES = {}

USE_TZ = True


# eCDT parameters; every value can be overridden per run by the command flags

ECDT_DEFAULTS = {
    'k': config('ECDT_K', default=30, cast=int),
    'r': config('ECDT_R', default=10.0, cast=float),
    'phi_min': config('ECDT_PHI_MIN', default=0.90, cast=float),
    'time_scale': config('ECDT_TIME_SCALE', default=5000.0, cast=float),
    'min_feature_age': config('ECDT_MIN_FEATURE_AGE', default=0.01, cast=float),
    't_w': config('ECDT_T_W', default=0.01, cast=float),
    'search_time': config('ECDT_SEARCH_TIME', default=0.2, cast=float),
    'iou_threshold': config('ECDT_IOU_THRESHOLD', default=0.7, cast=float),
    'delta_t': config('ECDT_DELTA_T', default=0.01, cast=float),
    'proximity_radius': config('ECDT_PROXIMITY_RADIUS', default=10.0, cast=float),
}

# DAVIS240 resolution of the public event-camera dataset
ECDT_SENSOR_WIDTH = config('ECDT_SENSOR_WIDTH', default=240, cast=int)
ECDT_SENSOR_HEIGHT = config('ECDT_SENSOR_HEIGHT', default=180, cast=int)

ECDT_SAMPLE_PERIOD = config('ECDT_SAMPLE_PERIOD', default=0.005, cast=float)
ECDT_THREADS = config('ECDT_THREADS', default=os.cpu_count() or 1, cast=int)
ECDT_THRESHOLDS = config('ECDT_THRESHOLDS', default='3,5,7', cast=Csv(float))

# Lines parsed per batch when reading event files
ECDT_PARSE_BATCH = config('ECDT_PARSE_BATCH', default=65536, cast=int)


# Logging

ECDT_LOG_LEVEL = config('ECDT_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        app: {
            'handlers': ['console'],
            'level': ECDT_LOG_LEVEL,
            'propagate': False,
        }
        for app in ('core', 'clustering', 'tracking', 'evaluation', 'synthetic')
    },
}
