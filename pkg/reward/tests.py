from fractions import Fraction
from itertools import product
from pathlib import Path
from types import SimpleNamespace

from django.test import SimpleTestCase
from hypothesis import given, strategies as st

from kb_harness.utils import read_jsonl
from protocol.parser import parse_trajectory

from .domain import RewardBreakdown, RewardConfig, RewardVariant
from .metrics import exact_match, normalize_answer
from .scoring import knowledge_boundary_reward, total_reward

CORPUS_PATH = Path(__file__).resolve().parent.parent / 'protocol' / 'testdata' / 'trajectories.jsonl'
DEFAULTS = RewardConfig()


def scored(text, rt, max_turns=6):
    return SimpleNamespace(parsed=parse_trajectory(text), retrieval_count=rt, max_turns=max_turns)


def transcript(answer, searches):
    turns = ''.join(
        f'<think>hop {i}</think><search>query {i}</search><context>Title: T{i}\nBody.</context>'
        for i in range(searches))
    return f'{turns}<think>done</think><answer>{answer}</answer>'


R_KB_PLUS = Fraction(3, 5)
R_KB_MINUS = Fraction(1, 20)
RT_MAX = 3


def piecewise(valid, r_ans, rt):
    """
    Expected total under the default weights, in exact rationals rounded once.
    """
    if not valid:
        return -1.0
    if r_ans:
        return float(1 + R_KB_PLUS * (1 - Fraction(min(rt, RT_MAX), RT_MAX)))
    return float(R_KB_MINUS if rt > 0 else Fraction(0))


class NormalizeAnswerTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(normalize_answer('The Eiffel Tower.'), 'eiffel tower')
        self.assertEqual(normalize_answer('yes'), 'yes')
        self.assertEqual(normalize_answer(' Beijing '), 'beijing')

    @given(st.text())
    def test_idempotent(self, text):
        once = normalize_answer(text)
        self.assertEqual(normalize_answer(once), once)


class ExactMatchTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(exact_match('Beijing', ['beijing']), 1)
        self.assertEqual(exact_match('Beijing city', ['Beijing']), 0)
        self.assertEqual(exact_match('', ['x']), 0)

    def test_any_gold(self):
        self.assertEqual(exact_match('NYC', ['New York City', 'nyc']), 1)

    def test_golds_required(self):
        with self.assertRaises(ValueError):
            exact_match('x', [])


class KnowledgeBoundaryRewardTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(knowledge_boundary_reward(1, 0, DEFAULTS), 0.6)
        self.assertEqual(knowledge_boundary_reward(1, 3, DEFAULTS), 0.0)
        self.assertEqual(knowledge_boundary_reward(0, 2, DEFAULTS), 0.05)
        self.assertEqual(knowledge_boundary_reward(1, 1, DEFAULTS), 0.4)
        self.assertEqual(knowledge_boundary_reward(1, 2, DEFAULTS), 0.2)

    def test_over_cap_is_clamped(self):
        self.assertEqual(knowledge_boundary_reward(1, 7, DEFAULTS), 0.0)

    def test_non_increasing_in_rt(self):
        values = [knowledge_boundary_reward(1, rt, DEFAULTS) for rt in range(8)]
        self.assertEqual(values, sorted(values, reverse=True))

    def test_variants(self):
        no_kb = RewardConfig(variant=RewardVariant.NO_KB)
        no_minus = RewardConfig(variant='no_kb_minus')
        self.assertEqual(knowledge_boundary_reward(1, 0, no_kb), 0.0)
        self.assertEqual(knowledge_boundary_reward(0, 2, no_kb), 0.0)
        self.assertEqual(knowledge_boundary_reward(0, 2, no_minus), 0.0)
        self.assertEqual(knowledge_boundary_reward(1, 0, no_minus), 0.6)

    def test_config_invariants(self):
        with self.assertRaises(ValueError):
            RewardConfig(r_kb_plus=0.6, r_kb_minus=0.2)
        with self.assertRaises(ValueError):
            RewardConfig(r_kb_minus=0.0)
        with self.assertRaises(ValueError):
            RewardConfig(rt_max=0)


class TotalRewardTests(SimpleTestCase):

    def test_truth_table(self):
        for valid, r_ans, rt in product((True, False), (0, 1), range(6)):
            with self.subTest(valid=valid, r_ans=r_ans, rt=rt):
                answer = 'Paris' if r_ans else 'Lyon'
                text = transcript(answer, rt)
                if not valid:
                    text += ' trailing'
                breakdown = total_reward(scored(text, rt), ['Paris'], DEFAULTS)
                self.assertEqual(breakdown.format_valid, valid)
                self.assertEqual(breakdown.total, piecewise(valid, r_ans, rt))
                if valid:
                    self.assertEqual(breakdown.r_ans, r_ans)
                    self.assertAlmostEqual(breakdown.total, breakdown.r_ans + breakdown.r_kb, places=12)
                else:
                    self.assertIsNone(breakdown.r_ans)
                    self.assertIsNone(breakdown.r_kb)

    def test_named_values(self):
        self.assertEqual(total_reward(scored(transcript('Paris', 0), 0), ['Paris'], DEFAULTS).total, 1.6)
        self.assertEqual(total_reward(scored(transcript('Paris', 3), 3), ['Paris'], DEFAULTS).total, 1.0)
        self.assertEqual(total_reward(scored(transcript('Lyon', 0), 0), ['Paris'], DEFAULTS).total, 0.0)
        self.assertEqual(total_reward(scored(transcript('Lyon', 1), 1), ['Paris'], DEFAULTS).total, 0.05)
        self.assertEqual(total_reward(scored('<answer>Paris</answer>', 0), ['Paris'], DEFAULTS).total, -1.0)

    def test_incentive_chain(self):
        no_search = piecewise(True, 1, 0)
        best_search = max(piecewise(True, 1, rt) for rt in range(1, 6))
        failed_search = piecewise(True, 0, 1)
        failed_direct = piecewise(True, 0, 0)
        malformed = piecewise(False, 0, 0)
        self.assertGreater(no_search, best_search)
        self.assertGreater(best_search, failed_search)
        self.assertGreater(failed_search, failed_direct)
        self.assertGreater(failed_direct, malformed)
        self.assertAlmostEqual(best_search, 1.4, places=12)

    def test_reward_range(self):
        for valid, r_ans, rt in product((True, False), (0, 1), range(10)):
            value = piecewise(valid, r_ans, rt)
            self.assertTrue(value == -1.0 or 0.0 <= value <= 1 + DEFAULTS.r_kb_plus)

    def test_turn_limit_breaks_format(self):
        text = transcript('Paris', 5)
        self.assertTrue(total_reward(scored(text, 5, max_turns=6), ['Paris'], DEFAULTS).format_valid)
        self.assertEqual(total_reward(scored(text, 5, max_turns=5), ['Paris'], DEFAULTS).total, -1.0)

    def test_malformed_corpus_cases_score_minus_one(self):
        cases = [case for case in read_jsonl(CORPUS_PATH) if not case['valid']]
        self.assertTrue(cases)
        for case in cases:
            with self.subTest(case['name']):
                breakdown = total_reward(scored(case['text'], 0), ['anything'], DEFAULTS)
                self.assertEqual(breakdown.total, -1.0)

    def test_invalid_breakdown_cannot_carry_answer(self):
        with self.assertRaises(ValueError):
            RewardBreakdown(format_valid=False, r_ans=1, r_kb=0.6, total=-1.0)
