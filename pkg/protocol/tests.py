from pathlib import Path
from types import SimpleNamespace

from django.test import SimpleTestCase
from hypothesis import given, strategies as st

from kb_harness.utils import read_jsonl

from .domain import SegmentKind, SegmentSource, Terminal
from .exceptions import AbsentError, MalformedError, MalformedReason
from .parser import (
    TranscriptBuilder,
    compute_loss_mask,
    cut_at_stop,
    extract_answer,
    format_diagnostics,
    parse_action,
    parse_trajectory,
    validate_format,
)
from .tokenizer import tokenize

CORPUS_PATH = Path(__file__).resolve().parent / 'testdata' / 'trajectories.jsonl'
LIMITS = SimpleNamespace(max_turns=6)


def load_corpus():
    return list(read_jsonl(CORPUS_PATH))


def context_walk(tokens):
    """
    Independent mask oracle: zero from a <context> token through its close.
    """
    mask, inside = [], False
    for token in tokens:
        if token == '<context>':
            inside = True
        mask.append(0 if inside else 1)
        if token == '</context>':
            inside = False
    return mask


class TokenizerTests(SimpleTestCase):

    def test_tags_are_single_tokens(self):
        self.assertEqual(
            tokenize('<think> I know</think>'),
            ['<think>', ' I', ' know', '</think>'])

    def test_space_before_tag_is_its_own_token(self):
        self.assertEqual(tokenize('a <answer>'), ['a', ' ', '<answer>'])

    @given(st.text())
    def test_round_trip(self, text):
        self.assertEqual(''.join(tokenize(text)), text)


class ParseActionTests(SimpleTestCase):

    def test_think_then_search(self):
        segments = parse_action('<think>x</think><search>q</search>')
        self.assertEqual([s.kind for s in segments], [SegmentKind.THINK, SegmentKind.SEARCH])
        self.assertEqual([s.body for s in segments], ['x', 'q'])
        self.assertTrue(all(s.source == SegmentSource.AGENT for s in segments))

    def test_think_then_answer(self):
        segments = parse_action('<think>x</think><answer>Beijing</answer>')
        self.assertEqual(segments[1].kind, SegmentKind.ANSWER)
        self.assertEqual(segments[1].body, 'Beijing')

    def test_missing_think(self):
        with self.assertRaises(MalformedError) as ctx:
            parse_action('<search>q</search>')
        self.assertEqual(ctx.exception.reason, MalformedReason.MISSING_THINK)
        self.assertEqual(ctx.exception.offset, 0)

    def test_search_and_answer_in_one_turn(self):
        with self.assertRaises(MalformedError) as ctx:
            parse_action('<think>x</think><search>q</search><answer>y</answer>')
        self.assertEqual(ctx.exception.reason, MalformedReason.MULTIPLE_ACTIONS)

    def test_offset_is_in_bytes(self):
        with self.assertRaises(MalformedError) as ctx:
            parse_action('<think>é</think>x<answer>y</answer>')
        self.assertEqual(ctx.exception.reason, MalformedReason.STRAY_TEXT)
        self.assertEqual(ctx.exception.offset, 17)

    def test_whitespace_is_preserved(self):
        text = '\n<think> a b </think> <answer> yes </answer>\n'
        segments = parse_action(text)
        self.assertEqual(segments[0].body, ' a b ')
        self.assertEqual(''.join(s.raw for s in segments), text)

    def test_cut_at_first_stop(self):
        emission = '<think>a</think><search>q</search><think>b</think><answer>c</answer>'
        self.assertEqual(cut_at_stop(emission), '<think>a</think><search>q</search>')


class CorpusTests(SimpleTestCase):
    """
    Hand-labeled trajectories: parsing, validation and round trip.
    """

    def test_corpus_size(self):
        self.assertGreaterEqual(len(load_corpus()), 20)

    def test_labels_agree(self):
        for case in load_corpus():
            with self.subTest(case['name']):
                parsed = parse_trajectory(case['text'])
                self.assertEqual(parsed.terminal, Terminal(case['terminal']))
                self.assertEqual(validate_format(parsed, LIMITS), case['valid'])
                if 'reason' in case:
                    self.assertIn(case['reason'], parsed.errors)
                if 'answer' in case:
                    self.assertEqual(parsed.answer_text, case['answer'])

    def test_round_trip(self):
        for case in load_corpus():
            with self.subTest(case['name']):
                self.assertEqual(parse_trajectory(case['text']).text(), case['text'])

    def test_mask_zero_exactly_on_context_spans(self):
        for case in load_corpus():
            with self.subTest(case['name']):
                parsed = parse_trajectory(case['text'])
                mask = compute_loss_mask(parsed)
                self.assertEqual(len(mask), parsed.n_tokens)
                in_context = set()
                for segment in parsed.of_kind(SegmentKind.CONTEXT):
                    in_context.update(range(*segment.span))
                for index, bit in enumerate(mask):
                    self.assertEqual(bit == 0, index in in_context)

    def test_spans_are_disjoint_and_ordered(self):
        for case in load_corpus():
            with self.subTest(case['name']):
                previous_end = 0
                for segment in parse_trajectory(case['text']).segments:
                    lo, hi = segment.span
                    self.assertGreaterEqual(lo, previous_end)
                    self.assertLessEqual(lo, hi)
                    previous_end = hi

    def test_nothing_validates_without_answer(self):
        for case in load_corpus():
            parsed = parse_trajectory(case['text'])
            if validate_format(parsed, LIMITS):
                self.assertEqual(len(parsed.of_kind(SegmentKind.ANSWER)), 1)


class ValidateFormatTests(SimpleTestCase):

    def test_only_answered_validates(self):
        texts = {
            Terminal.ANSWERED: '<think>a</think><answer>b</answer>',
            Terminal.TRUNCATED: '<think>a</think><search>q</search><context>No results found.</context>',
            Terminal.MALFORMED: '<think>a</think>',
        }
        for terminal, text in texts.items():
            parsed = parse_trajectory(text)
            self.assertEqual(parsed.terminal, terminal)
            self.assertEqual(validate_format(parsed, LIMITS), terminal == Terminal.ANSWERED)

    def test_stray_text_after_answer(self):
        parsed = parse_trajectory('<think>a</think><answer>b</answer> extra')
        self.assertFalse(validate_format(parsed, LIMITS))
        self.assertTrue(format_diagnostics(parsed, LIMITS))

    def test_deterministic(self):
        parsed = parse_trajectory(load_corpus()[1]['text'])
        self.assertEqual(
            [validate_format(parsed, LIMITS) for _ in range(5)], [True] * 5)

    def test_turn_limit(self):
        text = '<think>a</think><search>q</search><context>x</context><think>b</think><answer>c</answer>'
        self.assertTrue(validate_format(parse_trajectory(text), SimpleNamespace(max_turns=2)))
        self.assertFalse(validate_format(parse_trajectory(text), SimpleNamespace(max_turns=1)))


class ExtractAnswerTests(SimpleTestCase):

    def test_trimmed(self):
        self.assertEqual(extract_answer(parse_trajectory('<think>a</think><answer> yes </answer>')), 'yes')

    def test_malformed_has_no_answer(self):
        with self.assertRaises(AbsentError):
            extract_answer(parse_trajectory('<answer>x</answer>'))

    def test_multi_turn(self):
        text = ('<think>a</think><search>q</search><context>Title: France\nParis.</context>'
                '<think>b</think><answer>Paris</answer>')
        self.assertEqual(extract_answer(parse_trajectory(text)), 'Paris')


class LossMaskTests(SimpleTestCase):

    def test_no_context_all_ones(self):
        parsed = parse_trajectory('<think>a b c</think><answer>d</answer>')
        self.assertEqual(compute_loss_mask(parsed), [1] * parsed.n_tokens)

    def test_matches_independent_walker(self):
        builder = TranscriptBuilder()
        turn = '<think>one two</think><search>three four</search>'
        builder.add_agent_turn(parse_action(turn), tokenize(turn))
        body = 'a b c d e'
        builder.add_context(body, tokenize(f'<context>{body}</context>'))
        final = '<think>x</think><answer>y</answer>'
        builder.add_agent_turn(parse_action(final), tokenize(final))
        parsed = builder.build(Terminal.ANSWERED)
        mask = compute_loss_mask(parsed)
        self.assertEqual(mask, context_walk(builder.tokens))
        self.assertEqual(mask.count(0), 5 + 2)

    def test_answer_text_inside_observation_stays_masked(self):
        text = ('<think>a</think><search>q</search><context><answer>fake</answer></context>'
                '<think>b</think><answer>real</answer>')
        parsed = parse_trajectory(text)
        (context,) = parsed.of_kind(SegmentKind.CONTEXT)
        mask = compute_loss_mask(parsed)
        self.assertEqual(mask[context.span[0]:context.span[1]],
                         [0] * (context.span[1] - context.span[0]))
        self.assertEqual(parsed.answer_text, 'real')
