"""
Django settings for the kb_harness project.

Besides the usual Django switches this module is the bottom layer of the
run configuration: ``HARNESS_DEFAULTS`` holds a default for every RunConfig key.
Config files, ``KBH_*`` environment variables and command-line flags are
layered on top of it by ``cli.config``.
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# The harness serves no sessions; the key only satisfies Django's checks.
SECRET_KEY = os.environ.get('SECRET_KEY', 'kb-harness-insecure-key')

DEBUG = os.environ.get('DEBUG', 'false').lower() == 'true'

ALLOWED_HOSTS = os.environ.get('ALLOWED_HOSTS', 'localhost,127.0.0.1,testserver').split(',')


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    # Rest Framework
    'rest_framework',
    # Harness apps
    'protocol',
    'environment',
    'policy',
    'rollout',
    'reward',
    'grpo',
    'dataset',
    'evaluation',
    'cli',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.middleware.common.CommonMiddleware',
]

ROOT_URLCONF = 'kb_harness.urls'

WSGI_APPLICATION = 'kb_harness.wsgi.application'


# Every artifact is a file; no tables are needed.
DATABASES = {}

REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [
        'rest_framework.permissions.AllowAny',
    ],
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
    ],
    'DEFAULT_PARSER_CLASSES': [
        'rest_framework.parsers.JSONParser',
    ],
    'UNAUTHENTICATED_USER': None,
}


# Internationalization
LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

APPEND_SLASH = False


# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': os.environ.get('KBH_LOG_LEVEL', 'INFO'),
    },
}


# Assets
ASSETS_DIR = BASE_DIR / 'assets'
SYSTEM_PROMPT_PATH = ASSETS_DIR / 'system_prompt.txt'
PROBE_EXEMPLARS_PATH = ASSETS_DIR / 'probe_exemplars.txt'

# Policy served by the reference /generate endpoint, e.g. "toy:runs/policy.npz".
SERVE_POLICY = os.environ.get('KBH_SERVE_POLICY', '')

# Environment variable prefix mirroring the RunConfig keys.
HARNESS_ENV_PREFIX = 'KBH_'

# Defaults of every RunConfig key, sized for the synthetic world.
HARNESS_DEFAULTS = {
    # rollout
    'max_turns': 6,
    'max_retrievals': 4,
    'rt_max': 3,
    'k_docs': 3,
    'max_obs_chars': 1200,
    'group_size': 16,
    'max_tokens': 64,
    'temperature': 1.0,
    'eval_temperature': 0.0,
    # reward
    'r_kb_plus': 0.6,
    'r_kb_minus': 0.05,
    'reward_variant': 'full',
    # optimizer (LLM-scale runs use a learning rate around 5e-7)
    'clip_eps': 0.2,
    'kl_coeff': 0.001,
    'learning_rate': 0.05,
    'steps': 200,
    'batch_tasks': 4,
    'kl_reference': 'iteration_snapshot',
    'inner_epochs': 1,
    # probing and dataset construction (LLM-scale runs use 4000 per class)
    'n_samples': 5,
    'probe_temperature': 1.0,
    'n_per_class': 100,
    'mix': 'balanced',
    # synthetic world and toy policy
    'n_entities': 30,
    'internal_fraction': 0.5,
    'two_hop_fraction': 0.0,
    'external_coverage': 1.0,
    'feature_dim': 256,
    'pretrain_epochs': 200,
    'pretrain_lr': 0.1,
    'direct_demo_weight': 0.15,
    'guess_demo_weight': 0.0,
    'answer_slip': 0.0,
    # evaluation
    'eval_mode': 'agent',
    'report_format': 'table',
    # paths
    'corpus': '',
    'tasks': '',
    'dataset': '',
    'world': '',
    'probe_cache': '',
    'batch': '',
    'log_dir': 'runs',
    'out': '',
    'prompt_path': str(SYSTEM_PROMPT_PATH),
    'exemplars_path': str(PROBE_EXEMPLARS_PATH),
    # runtime
    'seed': 0,
    'policy': 'toy:',
    'workers': os.cpu_count() or 1,
    'remote_timeout': 30.0,
    'remote_retries': 2,
}
