"""
ASGI config for the kb_harness project.
"""

import os

from django.core.asgi import get_asgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'kb_harness.settings')

application = get_asgi_application()
