"""
Tag grammar of the agent protocol.

An agent turn is ``<think>…</think>`` followed by exactly one of
``<search>…</search>`` or ``<answer>…</answer>``. Only the environment
creates ``<context>`` spans; inside agent bodies context tags are plain text.
"""
import re
from typing import Protocol, Sequence

from .domain import (
    ACTION_KINDS,
    AGENT_KINDS,
    ParsedTrajectory,
    Segment,
    SegmentKind,
    SegmentSource,
    Terminal,
)
from .exceptions import AbsentError, MalformedError, MalformedReason
from .tokenizer import char_span_to_token_span, token_starts, tokenize

TAG_RE = re.compile(r'<(/?)([A-Za-z][A-Za-z0-9_-]*)>')
NON_SPACE_RE = re.compile(r'\S')

AGENT_TAG_NAMES = {kind.value: kind for kind in AGENT_KINDS}
CONTEXT_OPEN = '<context>'
CONTEXT_CLOSE = '</context>'
STOP_SEQUENCES = ('</search>', '</answer>')


class TurnLimits(Protocol):
    max_turns: int


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode('utf-8'))


def _malformed(text: str, index: int, reason: MalformedReason,
               detail: str = '') -> MalformedError:
    return MalformedError(_byte_offset(text, index), reason, detail)


def _find_close(text: str, name: str, body_start: int) -> re.Match:
    """
    Locate the closing tag of an agent segment, rejecting nested agent tags
    and unknown tags inside the body.
    """
    for inner in TAG_RE.finditer(text, body_start):
        closing, inner_name = inner.group(1) == '/', inner.group(2)
        if inner_name == 'context':
            continue
        if inner_name == name and closing:
            return inner
        if inner_name in AGENT_TAG_NAMES:
            raise _malformed(text, inner.start(), MalformedReason.NESTING,
                             f'{inner.group(0)} inside <{name}>')
        raise _malformed(text, inner.start(), MalformedReason.UNKNOWN_TAG,
                         inner.group(0))
    raise _malformed(text, body_start, MalformedReason.MISSING_CLOSE, f'</{name}>')


def parse_action(text: str) -> list[Segment]:
    """
    Parse one turn of agent output into its segments.

    Token spans are left unset; ``TranscriptBuilder`` assigns them.
    """
    segments: list[Segment] = []
    pos = 0
    while True:
        found = NON_SPACE_RE.search(text, pos)
        if found is None:
            break
        start = found.start()
        tag = TAG_RE.match(text, start)
        if tag is None:
            raise _malformed(text, start, MalformedReason.STRAY_TEXT)
        closing, name = tag.group(1) == '/', tag.group(2)
        if name == 'context':
            raise _malformed(text, start, MalformedReason.FORGED_CONTEXT)
        if name not in AGENT_TAG_NAMES:
            raise _malformed(text, start, MalformedReason.UNKNOWN_TAG, tag.group(0))
        if closing:
            raise _malformed(text, start, MalformedReason.UNEXPECTED_CLOSE, tag.group(0))

        kind = AGENT_TAG_NAMES[name]
        if not segments and kind != SegmentKind.THINK:
            raise _malformed(text, start, MalformedReason.MISSING_THINK)
        if segments and segments[-1].kind in ACTION_KINDS:
            raise _malformed(text, start, MalformedReason.MULTIPLE_ACTIONS)
        if segments and kind == SegmentKind.THINK:
            raise _malformed(text, start, MalformedReason.REPEATED_THINK)

        close = _find_close(text, name, tag.end())
        segments.append(Segment(
            kind=kind,
            body=text[tag.end():close.start()],
            source=SegmentSource.AGENT,
            lead=text[pos:start],
        ))
        pos = close.end()

    if not segments:
        raise _malformed(text, 0, MalformedReason.EMPTY)
    if segments[-1].kind == SegmentKind.THINK:
        raise _malformed(text, len(text), MalformedReason.MISSING_ACTION)
    if pos < len(text):
        last = segments[-1]
        segments[-1] = Segment(last.kind, last.body, last.source, last.span,
                               last.lead, text[pos:])
    return segments


def cut_at_stop(text: str, stops: Sequence[str] = STOP_SEQUENCES) -> str:
    """
    Truncate an emission right after the first stop sequence it contains.
    """
    cut = None
    for stop in stops:
        index = text.find(stop)
        if index >= 0:
            end = index + len(stop)
            cut = end if cut is None else min(cut, end)
    return text if cut is None else text[:cut]


class TranscriptBuilder:
    """
    Accumulates agent turns and environment observations into a
    ParsedTrajectory, assigning token spans as it goes.
    """

    def __init__(self):
        self.segments: list[Segment] = []
        self.tokens: list[str] = []
        self.residue = ''
        self.residue_span = (0, 0)
        self.errors: list[str] = []

    def _place(self, pieces: Sequence[str], tokens: list[str]) -> list[tuple[int, int]]:
        starts = token_starts(tokens)
        total = sum(len(token) for token in tokens)
        base = len(self.tokens)
        spans, char = [], 0
        for piece in pieces:
            lo, hi = char_span_to_token_span(starts, total, char, char + len(piece))
            spans.append((base + lo, base + hi))
            char += len(piece)
        self.tokens.extend(tokens)
        return spans

    def add_agent_turn(self, segments: Sequence[Segment], tokens: list[str]) -> list[Segment]:
        spans = self._place([segment.raw for segment in segments], tokens)
        placed = [segment.with_span(span) for segment, span in zip(segments, spans)]
        self.segments.extend(placed)
        return placed

    def add_context(self, body: str, tokens: list[str], lead: str = '') -> Segment:
        segment = Segment(SegmentKind.CONTEXT, body, SegmentSource.ENVIRONMENT, lead=lead)
        (span,) = self._place([segment.raw], tokens)
        placed = segment.with_span(span)
        self.segments.append(placed)
        return placed

    def add_residue(self, text: str, tokens: list[str], error: str) -> None:
        (span,) = self._place([text], tokens)
        self.residue += text
        self.residue_span = span
        self.errors.append(error)

    def build(self, terminal: Terminal) -> ParsedTrajectory:
        answer = None
        answers = [segment for segment in self.segments if segment.kind == SegmentKind.ANSWER]
        if terminal == Terminal.ANSWERED and answers:
            answer = answers[-1].body.strip()
        return ParsedTrajectory(
            segments=tuple(self.segments),
            terminal=terminal,
            answer_text=answer,
            n_tokens=len(self.tokens),
            residue=self.residue,
            residue_span=self.residue_span,
            errors=tuple(self.errors),
        )


def parse_trajectory(text: str) -> ParsedTrajectory:
    """
    Rebuild a ParsedTrajectory from a logged transcript.

    A context block is only recognised directly after a search turn, so
    context tags typed by the agent never become observations.
    """
    builder = TranscriptBuilder()
    cursor = 0
    terminal = Terminal.TRUNCATED
    while cursor < len(text):
        end = len(cut_at_stop(text[cursor:])) + cursor
        chunk = text[cursor:end]
        if not chunk.strip():
            # trailing whitespace after an observation
            builder.add_residue(chunk, tokenize(chunk), MalformedReason.STRAY_TEXT.value)
            terminal = Terminal.MALFORMED
            break
        try:
            segments = parse_action(chunk)
        except MalformedError as exc:
            rest = text[cursor:]
            builder.add_residue(rest, tokenize(rest), exc.reason.value)
            terminal = Terminal.MALFORMED
            break
        builder.add_agent_turn(segments, tokenize(chunk))
        cursor = end
        if segments[-1].kind == SegmentKind.ANSWER:
            terminal = Terminal.ANSWERED
            rest = text[cursor:]
            if rest:
                builder.add_residue(rest, tokenize(rest), MalformedReason.STRAY_TEXT.value)
                terminal = Terminal.MALFORMED
            break
        found = NON_SPACE_RE.search(text, cursor)
        if found is None or not text.startswith(CONTEXT_OPEN, found.start()):
            continue
        close = text.find(CONTEXT_CLOSE, found.start() + len(CONTEXT_OPEN))
        if close < 0:
            rest = text[cursor:]
            builder.add_residue(rest, tokenize(rest), MalformedReason.MISSING_CLOSE.value)
            terminal = Terminal.MALFORMED
            break
        lead = text[cursor:found.start()]
        body = text[found.start() + len(CONTEXT_OPEN):close]
        block_end = close + len(CONTEXT_CLOSE)
        builder.add_context(body, tokenize(text[cursor:block_end]), lead=lead)
        cursor = block_end
    return builder.build(terminal)


def format_diagnostics(traj: ParsedTrajectory, limits: TurnLimits) -> list[str]:
    """
    Every reason the trajectory fails the format contract; empty when valid.
    """
    reasons = list(traj.errors)
    if traj.terminal != Terminal.ANSWERED:
        reasons.append(f'terminal={traj.terminal.value}')
    if traj.residue:
        reasons.append('unparsed agent text')
    answers = traj.of_kind(SegmentKind.ANSWER)
    if len(answers) != 1:
        reasons.append(f'answer segments={len(answers)}')
    if traj.agent_turns() > limits.max_turns:
        reasons.append(f'turns={traj.agent_turns()} > max_turns={limits.max_turns}')

    expect_think = True
    previous = None
    for segment in traj.segments:
        if segment.lead.strip() or segment.tail.strip():
            reasons.append(f'text outside tags near {segment.kind.value}')
        if segment.kind == SegmentKind.CONTEXT:
            if previous is None or previous.kind != SegmentKind.SEARCH:
                reasons.append('context without preceding search')
        elif expect_think and segment.kind != SegmentKind.THINK:
            reasons.append(f'{segment.kind.value} before think')
        elif not expect_think and segment.kind == SegmentKind.THINK:
            reasons.append('think without action')
        if (previous is not None and previous.kind == SegmentKind.SEARCH
                and segment.kind != SegmentKind.CONTEXT):
            reasons.append('search without observation')
        if previous is not None and previous.kind == SegmentKind.ANSWER:
            reasons.append('segment after answer')
        if segment.kind == SegmentKind.THINK:
            expect_think = False
        elif segment.kind in ACTION_KINDS:
            expect_think = True
        previous = segment
    return reasons


def validate_format(traj: ParsedTrajectory, limits: TurnLimits) -> bool:
    return not format_diagnostics(traj, limits)


def extract_answer(traj: ParsedTrajectory) -> str:
    if traj.terminal != Terminal.ANSWERED:
        raise AbsentError(f'trajectory terminal is {traj.terminal.value}')
    answers = traj.of_kind(SegmentKind.ANSWER)
    if len(answers) != 1:
        raise AbsentError(f'expected one answer segment, found {len(answers)}')
    return answers[0].body.strip()


def compute_loss_mask(traj: ParsedTrajectory) -> list[int]:
    """
    1 for agent-generated tokens (tags included), 0 for observation tokens.
    """
    mask = [1] * traj.n_tokens
    for segment in traj.segments:
        if segment.source == SegmentSource.ENVIRONMENT:
            lo, hi = segment.span
            mask[lo:hi] = [0] * (hi - lo)
    return mask
