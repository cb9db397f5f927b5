"""
URL configuration for the kb_harness project.

Only the policy app is routed: it exposes the remote generation wire
contract (``POST /generate``) on top of a locally loaded policy.
"""
from django.urls import include, path

urlpatterns = [
    path('', include('policy.urls')),
]
