"""
WSGI config for the kb_harness project.

Serves the reference ``/generate`` endpoint, so an external client can talk
to a local scripted or toy policy over the remote wire contract.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'kb_harness.settings')

application = get_wsgi_application()
