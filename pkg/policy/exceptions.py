from kb_harness.exceptions import HarnessError


class UnknownToken(HarnessError):
    """
    A token outside the toy policy's vocabulary.
    """

    def __init__(self, token: str):
        self.token = token
        super().__init__(f'token {token!r} is not in the vocabulary')


class RemoteUnavailable(HarnessError):
    """
    The remote endpoint timed out or refused the connection on every attempt.
    """

    def __init__(self, endpoint: str, attempts: int, cause: Exception):
        self.endpoint = endpoint
        self.attempts = attempts
        self.cause = cause
        super().__init__(f'{endpoint} unavailable after {attempts} attempts: {cause}')


class RemoteHTTPError(HarnessError):

    def __init__(self, endpoint: str, status_code: int, body: str = ''):
        self.endpoint = endpoint
        self.status_code = status_code
        self.body = body
        super().__init__(f'{endpoint} answered HTTP {status_code}')


class ContractViolation(HarnessError):
    """
    A remote response does not follow the generation wire contract.
    """

    def __init__(self, errors):
        self.errors = errors
        super().__init__(f'malformed generation response: {errors}')
