"""Configure Django before pytest collects the apps' tests.py modules."""

import os

import django
from django.test.utils import setup_test_environment

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'kb_harness.settings')
django.setup()
setup_test_environment()
