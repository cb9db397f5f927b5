"""
Client of the HTTP generation contract.

Timeouts and refused connections are retried; HTTP errors and malformed
bodies are not.
"""
import logging
import threading

import requests

from protocol.tokenizer import tokenize

from .domain import GenerationRequest, GenerationResponse
from .exceptions import ContractViolation, RemoteHTTPError, RemoteUnavailable
from .serializers import GenerationRequestSerializer, GenerationResponseSerializer

logger = logging.getLogger(__name__)


class RemotePolicy:

    def __init__(self, endpoint: str, timeout: float = 30.0, retries: int = 2):
        self.endpoint = endpoint.rstrip('/')
        if not self.endpoint.endswith('/generate'):
            self.endpoint += '/generate'
        self.timeout = timeout
        self.retries = retries
        self._local = threading.local()

    @property
    def session(self) -> requests.Session:
        # one session per worker thread
        session = getattr(self._local, 'session', None)
        if session is None:
            session = self._local.session = requests.Session()
        return session

    def _post(self, payload: dict) -> requests.Response:
        attempts = self.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                return self.session.post(self.endpoint, json=payload, timeout=self.timeout)
            except (requests.Timeout, requests.ConnectionError) as exc:
                logger.warning('remote generate failed endpoint=%s attempt=%d/%d error=%s',
                               self.endpoint, attempt, attempts, exc)
                if attempt == attempts:
                    raise RemoteUnavailable(self.endpoint, attempts, exc) from exc

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        response = self._post(GenerationRequestSerializer(req).data)
        if not response.ok:
            raise RemoteHTTPError(self.endpoint, response.status_code, response.text[:500])
        try:
            body = response.json()
        except ValueError as exc:
            raise ContractViolation({'body': 'Response is not JSON.'}) from exc
        if not isinstance(body, dict):
            raise ContractViolation({'body': 'Response must be a JSON object.'})
        serializer = GenerationResponseSerializer(data=body)
        if not serializer.is_valid():
            raise ContractViolation(dict(serializer.errors))
        return serializer.save()

    def tokenize(self, text: str) -> list[str]:
        return tokenize(text)


def remote_generate(endpoint: str, req: GenerationRequest, **kwargs) -> GenerationResponse:
    return RemotePolicy(endpoint, **kwargs).generate(req)
