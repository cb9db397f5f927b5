from dataclasses import dataclass, field
from typing import Optional

from django.db import models
from django.utils.translation import gettext_lazy as _


class SegmentKind(models.TextChoices):
    THINK = 'think', _('Think')
    SEARCH = 'search', _('Search')
    ANSWER = 'answer', _('Answer')
    CONTEXT = 'context', _('Context')


class SegmentSource(models.TextChoices):
    AGENT = 'agent', _('Agent')
    ENVIRONMENT = 'environment', _('Environment')


class Terminal(models.TextChoices):
    ANSWERED = 'answered', _('Answered')
    TRUNCATED = 'truncated', _('Truncated')
    MALFORMED = 'malformed', _('Malformed')


AGENT_KINDS = (SegmentKind.THINK, SegmentKind.SEARCH, SegmentKind.ANSWER)
ACTION_KINDS = (SegmentKind.SEARCH, SegmentKind.ANSWER)


@dataclass(frozen=True)
class Segment:
    """
    One tagged span of a trajectory.

    ``lead`` and ``tail`` hold the whitespace around the tags so that the
    concatenated ``raw`` forms of all segments reproduce the transcript.
    """
    kind: SegmentKind
    body: str
    source: SegmentSource
    span: tuple[int, int] = (0, 0)
    lead: str = ''
    tail: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'kind', SegmentKind(self.kind))
        object.__setattr__(self, 'source', SegmentSource(self.source))
        expected = (SegmentSource.ENVIRONMENT if self.kind == SegmentKind.CONTEXT
                    else SegmentSource.AGENT)
        if self.source != expected:
            raise ValueError(f'{self.kind} segments must come from {expected}')

    @property
    def open_tag(self) -> str:
        return f'<{self.kind.value}>'

    @property
    def close_tag(self) -> str:
        return f'</{self.kind.value}>'

    @property
    def raw(self) -> str:
        return f'{self.lead}{self.open_tag}{self.body}{self.close_tag}{self.tail}'

    def with_span(self, span: tuple[int, int]) -> 'Segment':
        return Segment(self.kind, self.body, self.source, span, self.lead, self.tail)


@dataclass(frozen=True)
class ParsedTrajectory:
    """
    Structural decomposition of a rollout transcript (prompt excluded).

    ``residue`` is agent text that could not be parsed; it is only ever
    non-empty for malformed trajectories and always sits at the end.
    """
    segments: tuple[Segment, ...]
    terminal: Terminal
    answer_text: Optional[str] = None
    n_tokens: int = 0
    residue: str = ''
    residue_span: tuple[int, int] = (0, 0)
    errors: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, 'terminal', Terminal(self.terminal))

    def text(self) -> str:
        return ''.join(segment.raw for segment in self.segments) + self.residue

    def agent_turns(self) -> int:
        turns = sum(1 for segment in self.segments if segment.kind in ACTION_KINDS)
        if self.residue:
            turns += 1
        return turns

    def of_kind(self, kind: SegmentKind) -> list[Segment]:
        return [segment for segment in self.segments if segment.kind == kind]
