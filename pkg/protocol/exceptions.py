from django.db import models

from kb_harness.exceptions import HarnessError


class MalformedReason(models.TextChoices):
    EMPTY = 'Empty'
    STRAY_TEXT = 'StrayText'
    UNKNOWN_TAG = 'UnknownTag'
    FORGED_CONTEXT = 'ForgedContext'
    UNEXPECTED_CLOSE = 'UnexpectedClose'
    NESTING = 'Nesting'
    MISSING_CLOSE = 'MissingClose'
    MISSING_THINK = 'MissingThink'
    REPEATED_THINK = 'RepeatedThink'
    MISSING_ACTION = 'MissingAction'
    MULTIPLE_ACTIONS = 'MultipleActions'


class MalformedError(HarnessError):
    """
    An agent turn violates the tag grammar.

    ``offset`` is the UTF-8 byte offset of the first violation.
    """

    def __init__(self, offset: int, reason: MalformedReason, detail: str = ''):
        self.offset = offset
        self.reason = MalformedReason(reason)
        self.detail = detail
        message = f'{self.reason.value} at byte {offset}'
        if detail:
            message += f': {detail}'
        super().__init__(message)


class AbsentError(HarnessError):
    """
    The trajectory did not end with an answer.
    """
