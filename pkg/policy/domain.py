import zlib
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, runtime_checkable

from django.db import models
from django.utils.translation import gettext_lazy as _

from protocol.parser import STOP_SEQUENCES


class PolicyKind(models.TextChoices):
    SCRIPTED = 'scripted', _('Scripted')
    TOY = 'toy', _('Toy linear-softmax')
    REMOTE = 'remote', _('Remote HTTP')


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    stop_sequences: tuple[str, ...] = STOP_SEQUENCES
    max_tokens: int = 64
    temperature: float = 1.0
    seed: int = 0
    # offset in prompt where the agent and environment transcript begins
    transcript_start: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, 'stop_sequences', tuple(self.stop_sequences))
        if self.max_tokens < 1:
            raise ValueError('max_tokens must be at least 1')
        if self.temperature < 0:
            raise ValueError('temperature must be non-negative')
        if self.transcript_start is not None and not 0 <= self.transcript_start <= len(self.prompt):
            raise ValueError('transcript_start must lie within the prompt')


@dataclass(frozen=True)
class GenerationResponse:
    """
    ``text`` includes the stop sequence that fired. ``logprobs`` are taken
    under the policy at temperature 1 and are None when unavailable.
    """
    text: str
    tokens: tuple[str, ...] = field(default=())
    token_ids: tuple[int, ...] = field(default=())
    logprobs: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, 'tokens', tuple(self.tokens))
        object.__setattr__(self, 'token_ids', tuple(self.token_ids))
        if self.logprobs is not None:
            object.__setattr__(self, 'logprobs', tuple(float(lp) for lp in self.logprobs))
            if len(self.logprobs) != len(self.token_ids):
                raise ValueError('logprobs and token_ids differ in length')
            if any(lp > 0.0 for lp in self.logprobs):
                raise ValueError('logprobs must not be positive')


@runtime_checkable
class PolicyHandle(Protocol):

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        ...


def generate(policy: PolicyHandle, req: GenerationRequest) -> GenerationResponse:
    return policy.generate(req)


def hashed_token_ids(tokens: Sequence[str]) -> tuple[int, ...]:
    """
    Stable ids for policies without a vocabulary of their own.
    """
    return tuple(zlib.crc32(token.encode('utf-8')) for token in tokens)


QUESTION_MARKER = 'Question:'


def question_anchor(prompt: str, transcript_start: Optional[int] = None) -> int:
    """
    Offset of the last ``Question:`` marker ahead of the transcript, or -1.

    Text after ``transcript_start`` came from the agent or the environment
    and never moves the anchor.
    """
    end = len(prompt) if transcript_start is None else transcript_start
    return prompt.rfind(QUESTION_MARKER, 0, end)


def question_of(prompt: str, transcript_start: Optional[int] = None) -> str:
    """
    The question a prompt is about: the rest of the line after the anchor.
    """
    start = question_anchor(prompt, transcript_start)
    if start < 0:
        return ''
    line = prompt[start + len(QUESTION_MARKER):].split('\n', 1)[0]
    return line.strip()
