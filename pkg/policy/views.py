import logging

from django.conf import settings
from rest_framework import permissions, status
from rest_framework.response import Response
from rest_framework.views import APIView

from kb_harness.exceptions import HarnessError

from .loader import serving_policy
from .serializers import GenerationRequestSerializer, GenerationResponseSerializer

logger = logging.getLogger(__name__)


class GenerateView(APIView):
    """
    Serve the generation contract on top of a local policy.
    """
    permission_classes = [permissions.AllowAny]

    def post(self, request, *args, **kwargs):
        """
        handle post http method
        """
        if not settings.SERVE_POLICY:
            return Response({'detail': 'No policy is being served.'},
                            status=status.HTTP_503_SERVICE_UNAVAILABLE)
        serializer = GenerationRequestSerializer(data=request.data)
        if not serializer.is_valid():
            return Response(serializer.errors, status=status.HTTP_400_BAD_REQUEST)
        try:
            policy = serving_policy(settings.SERVE_POLICY)
            reply = policy.generate(serializer.save())
        except (HarnessError, OSError, ValueError) as exc:
            logger.error('generation failed policy=%s error=%s', settings.SERVE_POLICY, exc)
            return Response({'detail': str(exc)}, status=status.HTTP_500_INTERNAL_SERVER_ERROR)
        return Response(GenerationResponseSerializer(reply).data, status=status.HTTP_200_OK)
